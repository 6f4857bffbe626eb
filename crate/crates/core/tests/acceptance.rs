//! Acceptance suite. Runs without the libtest harness so every criterion
//! prints one PASS/FAIL line, in order, even when the run succeeds.

use std::collections::{BTreeMap, BTreeSet};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spladapt::autodiff::{SeqLayout, Tape, Tensor, Var};
use spladapt::data::{synth_generate, SynthSpec};
use spladapt::encoder::{
    hidden_states, mlm_logits, sparse_activations, Batch, EncoderWeights, ModelConfig, SparseVector, CLS, MASK, SEP,
};
use spladapt::eval::{mrr_at_k, ndcg_at_k, paired_ttest, Qrels};
use spladapt::experiment::{
    evaluate_model, pipeline_report, Benchmark, Experiment, COMPOSED_ROW, WO_PRETRAINING_ROW, WO_SOURCE_ROW,
};
use spladapt::eval::ZERO_SHOT_ROW;
use spladapt::params::{compose, freeze_verify, partition_parameters, splice, Checkpoint, ParameterPartition, Stage};
use spladapt::retrieval::{retrieve_bm25, retrieve_sparse, Hit, InvertedIndex, RankedList};
use spladapt::trainer::{
    finetune_ir, mask_tokens, pretrain_mlm, ranking_loss, MaskAction, Mode, PipelineSpec, StageSpec, TrainConfig,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

struct Suite {
    failed: Vec<String>,
}

impl Suite {
    fn run(&mut self, id: &str, name: &str, budget: Duration, f: impl FnOnce() -> Outcome) {
        let t = Instant::now();
        let o = f();
        let took = t.elapsed();
        let in_time = took <= budget;
        let pass = o.pass && in_time;
        let timing = format!("{:.2}s of {:.0}s", took.as_secs_f64(), budget.as_secs_f64());
        let late = if in_time { "" } else { " OVER BUDGET" };
        println!(
            "{} {id} {name}: {} [{timing}{late}]",
            if pass { "PASS" } else { "FAIL" },
            o.detail
        );
        if !pass {
            self.failed.push(id.to_string());
        }
    }
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

fn main() -> ExitCode {
    let mut suite = Suite { failed: Vec::new() };
    let bench = Benchmark::from_synth(synth_generate(&SynthSpec::default()).unwrap(), 30_000).unwrap();

    suite.run("C1", "partition law", secs(1), partition_law);
    suite.run("C2a", "freeze bit-exactness (MLM)", secs(60), || freeze_mlm(&bench));
    suite.run("C2b", "freeze bit-exactness (fine-tune)", secs(60), || freeze_finetune(&bench));
    suite.run("C3", "gradient check", secs(60), gradient_check);
    suite.run("C4", "compose identity and surgery", secs(1), || compose_surgery(&bench));
    suite.run("C5", "retrieval oracle equivalence", secs(60), retrieval_oracles);
    suite.run("C6", "metric oracle equivalence", secs(10), metric_oracles);
    let mut suite_rows = None;
    suite.run("C7", "composed beats zero-shot (5 seeds)", secs(15 * 60), || {
        let (o, rows) = five_seed_suite(&bench);
        suite_rows = Some(rows);
        o
    });
    suite.run("C8", "ablation ordering", secs(1), || ablation_ordering(suite_rows.as_deref().unwrap_or(&[])));
    suite.run("C9", "sparsity responds to lambda_d", secs(5 * 60), || sparsity_sweep(&bench));
    suite.run("C10", "MLM masking distribution", secs(10), masking_distribution);

    if suite.failed.is_empty() {
        println!("acceptance: all criteria PASS");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: FAIL {}", suite.failed.join(", "));
        ExitCode::FAILURE
    }
}

// C1

fn partition_law() -> Outcome {
    let config = ModelConfig::toy(40);
    assert_eq!(config.layers, 6);
    let names: BTreeSet<String> = config.parameter_names().into_iter().collect();
    let mut problems = Vec::new();
    for k in 0..6usize {
        let p = ParameterPartition::for_k(&config, k as i64).unwrap();
        if !p.domain.is_disjoint(&p.task) {
            problems.push(format!("k={k}: overlap"));
        }
        if p.domain.union(&p.task).cloned().collect::<BTreeSet<_>>() != names {
            problems.push(format!("k={k}: not exhaustive"));
        }
        for name in &names {
            let layer = name
                .strip_prefix("layers.")
                .map(|r| r.split('.').next().unwrap().parse::<usize>().unwrap());
            let want_domain = match layer {
                None => true,
                Some(i) => i < k,
            };
            if p.domain.contains(name) != want_domain {
                problems.push(format!("k={k}: {name} misplaced"));
            }
        }
        if partition_parameters(&config.with_k(k)).unwrap() != p {
            problems.push(format!("k={k}: config route differs"));
        }
    }
    let rejected = ParameterPartition::for_k(&config, 6).is_err() && partition_parameters(&config.with_k(6)).is_err();
    if !rejected {
        problems.push("k=6 accepted".into());
    }
    outcome(
        problems.is_empty(),
        if problems.is_empty() {
            "k=0..5 disjoint and exhaustive, embeddings in domain, layer i in domain iff i<k; k=6 rejected".to_string()
        } else {
            problems.join("; ")
        },
    )
}

// C2

fn changed_tensors(a: &Checkpoint, b: &Checkpoint) -> BTreeSet<String> {
    a.weights
        .tensors()
        .iter()
        .filter(|(n, t)| b.weights.get(n).unwrap().to_le_bytes() != t.to_le_bytes())
        .map(|(n, _)| n.clone())
        .collect()
}

fn toy_base(bench: &Benchmark, seed: u64) -> Checkpoint {
    let config = bench.model_config(ModelConfig::toy(0));
    Checkpoint::new(EncoderWeights::init(config, seed).unwrap(), Stage::Base, None, Vec::new())
}

fn stage_spec(ckpt: &Checkpoint, stage: Stage, steps: usize, seed: u64) -> StageSpec {
    let partition = partition_parameters(ckpt.config()).unwrap();
    let train = TrainConfig {
        steps,
        ..TrainConfig::default()
    };
    StageSpec::new(stage, &partition, train, seed).unwrap()
}

fn freeze_mlm(bench: &Benchmark) -> Outcome {
    let base = toy_base(bench, 1);
    let corpus: Vec<Vec<u32>> = bench.target.corpus.texts().map(|t| bench.vocab.tokenize(t, 64)).collect();
    let out = pretrain_mlm(&base, &corpus, &stage_spec(&base, Stage::PretrainTarget, 50, 2)).unwrap();
    let partition = partition_parameters(base.config()).unwrap();
    let changed = changed_tensors(&base, &out.checkpoint);
    let report = freeze_verify(&base, &out.checkpoint, &partition.task);
    let pass = changed.is_disjoint(&partition.task) && changed.iter().any(|n| partition.domain.contains(n)) && report.pass;
    outcome(
        pass,
        format!(
            "{} task tensors identical, {}/{} domain tensors changed; freeze_verify: {}",
            partition.task.len(),
            changed.len(),
            partition.domain.len(),
            report.summary()
        ),
    )
}

fn freeze_finetune(bench: &Benchmark) -> Outcome {
    let base = toy_base(bench, 1);
    let out = finetune_ir(
        &base,
        &bench.source.triples,
        &bench.source.corpus,
        &bench.vocab,
        &stage_spec(&base, Stage::FinetuneSource, 50, 3),
    )
    .unwrap();
    let partition = partition_parameters(base.config()).unwrap();
    let changed = changed_tensors(&base, &out.checkpoint);
    let report = freeze_verify(&base, &out.checkpoint, &partition.domain);
    let pass = changed.is_disjoint(&partition.domain) && changed.iter().any(|n| partition.task.contains(n)) && report.pass;
    outcome(
        pass,
        format!(
            "{} domain tensors identical, {}/{} task tensors changed; freeze_verify: {}",
            partition.domain.len(),
            changed.len(),
            partition.task.len(),
            report.summary()
        ),
    )
}

// C3

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Worst relative error between tape gradients and central differences (h = 1e-5).
fn grad_error(inputs: &[Tensor<f64>], f: &dyn Fn(&mut Tape<f64>, &[Var]) -> Var) -> f64 {
    let eval = |xs: &[Tensor<f64>]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.leaf(x.clone())).collect();
        let out = f(&mut tape, &vars);
        tape.value(out).unwrap().item()
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone().with_grad(true))).collect();
    let loss = f(&mut tape, &vars);
    let grads = tape.backward(loss).unwrap();
    let h = 1e-5;
    let mut worst = 0.0f64;
    for (i, x) in inputs.iter().enumerate() {
        let zero = Tensor::zeros(x.shape());
        let analytic = grads.get(vars[i]).unwrap_or(&zero);
        for j in 0..x.numel() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += h;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            worst = worst.max(rel_err(analytic.data()[j], numeric));
        }
    }
    worst
}

fn rel_err(a: f64, n: f64) -> f64 {
    let denom = a.abs().max(n.abs());
    if denom < 1e-7 {
        (a - n).abs()
    } else {
        (a - n).abs() / denom
    }
}

/// Scalar reduction through fixed random weights.
fn project(tape: &mut Tape<f64>, x: Var, seed: u64) -> Var {
    let shape = tape.value(x).unwrap().shape().to_vec();
    let w = tape.constant(random(&mut ChaCha8Rng::seed_from_u64(seed), &shape));
    let p = tape.mul(x, w).unwrap();
    tape.sum(p).unwrap()
}

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut r = |shape: &[usize]| random(&mut rng, shape);
    let layout = SeqLayout::new(2, 3, vec![true, true, false, true, true, true]).unwrap();
    let content = SeqLayout::new(2, 3, vec![true, false, false, false, true, true]).unwrap();
    type Case = (&'static str, Vec<Tensor<f64>>, Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Var>);
    let cases: Vec<Case> = vec![
        ("matmul", vec![r(&[3, 4]), r(&[4, 5])], Box::new(|t, v| {
            let y = t.matmul(v[0], v[1]).unwrap();
            project(t, y, 1)
        })),
        ("matmul_nt", vec![r(&[3, 4]), r(&[5, 4])], Box::new(|t, v| {
            let y = t.matmul_nt(v[0], v[1]).unwrap();
            project(t, y, 2)
        })),
        ("add/mul/scale", vec![r(&[3, 4]), r(&[3, 4])], Box::new(|t, v| {
            let s = t.add(v[0], v[1]).unwrap();
            let m = t.mul(s, v[1]).unwrap();
            let y = t.scale(m, -0.7).unwrap();
            project(t, y, 3)
        })),
        ("add_bias", vec![r(&[3, 4]), r(&[4])], Box::new(|t, v| {
            let y = t.add_bias(v[0], v[1]).unwrap();
            project(t, y, 4)
        })),
        ("gather", vec![r(&[5, 3])], Box::new(|t, v| {
            let y = t.gather(v[0], &[4, 0, 4, 2]).unwrap();
            project(t, y, 5)
        })),
        ("layer_norm", vec![r(&[3, 6]), r(&[6]), r(&[6])], Box::new(|t, v| {
            let y = t.layer_norm(v[0], v[1], v[2], 1e-5).unwrap();
            project(t, y, 6)
        })),
        ("gelu", vec![r(&[4, 5])], Box::new(|t, v| {
            let y = t.gelu(v[0]).unwrap();
            project(t, y, 7)
        })),
        ("log1p_relu", vec![r(&[4, 5])], Box::new(|t, v| {
            let y = t.log1p_relu(v[0]).unwrap();
            project(t, y, 8)
        })),
        ("attention", vec![r(&[6, 4]), r(&[6, 4]), r(&[6, 4])], Box::new(move |t, v| {
            let y = t.attention(v[0], v[1], v[2], 2, &layout).unwrap();
            project(t, y, 9)
        })),
        ("max_pool", vec![r(&[6, 4])], Box::new(move |t, v| {
            let y = t.max_pool(v[0], &content).unwrap();
            project(t, y, 10)
        })),
        ("row_dot", vec![r(&[3, 4]), r(&[3, 4])], Box::new(|t, v| {
            let y = t.row_dot(v[0], v[1]).unwrap();
            project(t, y, 11)
        })),
        ("concat_cols", vec![r(&[3, 2]), r(&[3, 4])], Box::new(|t, v| {
            let y = t.concat_cols(v[0], v[1]).unwrap();
            project(t, y, 12)
        })),
        ("col_mean", vec![r(&[3, 4])], Box::new(|t, v| {
            let y = t.col_mean(v[0]).unwrap();
            project(t, y, 13)
        })),
        ("softmax_cross_entropy", vec![r(&[4, 5])], Box::new(|t, v| {
            t.softmax_cross_entropy(v[0], &[2, usize::MAX, 0, 4], usize::MAX).unwrap()
        })),
        ("ranking_loss", vec![r(&[3, 6]), r(&[3, 6]), r(&[3, 6])], Box::new(|t, v| {
            // Non-negative representations, as produced by the sparse head.
            let q = t.log1p_relu(v[0]).unwrap();
            let p = t.log1p_relu(v[1]).unwrap();
            let n = t.log1p_relu(v[2]).unwrap();
            ranking_loss(t, q, p, n, 0.3, 0.2).unwrap().total
        })),
    ];
    let mut worst: Vec<(String, f64)> = cases
        .iter()
        .map(|(name, inputs, f)| (name.to_string(), grad_error(inputs, f.as_ref())))
        .collect();
    worst.push(("encoder (d=8, L=2, V=20)".into(), encoder_grad_error()));
    let max = worst.iter().map(|w| w.1).fold(0.0, f64::max);
    let bad: Vec<String> = worst
        .iter()
        .filter(|w| !(w.1 < 1e-4))
        .map(|w| format!("{} {:.2e}", w.0, w.1))
        .collect();
    outcome(
        bad.is_empty(),
        if bad.is_empty() {
            format!("{} checks, worst relative error {max:.2e} < 1e-4", worst.len())
        } else {
            format!("relative error >= 1e-4: {}", bad.join(", "))
        },
    )
}

/// Every encoder parameter, through both the MLM loss and the sparse head.
fn encoder_grad_error() -> f64 {
    let config = ModelConfig {
        vocab_size: 20,
        layers: 2,
        d_model: 8,
        n_heads: 2,
        d_ffn: 16,
        max_seq_len: 8,
        k_domain_layers: 1,
    };
    let mut weights = EncoderWeights::<f64>::init(config, 31).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for t in weights.tensors_mut().values_mut() {
        for x in t.data_mut() {
            *x += rng.random_range(-0.3..0.3);
        }
    }
    let seqs = vec![vec![CLS, 6, MASK, 11, SEP], vec![CLS, 17, 8, SEP]];
    let batch = Batch::new(&seqs, &config).unwrap();
    let ig = usize::MAX;
    let targets = vec![ig, ig, 7, ig, ig, ig, 12, ig, ig, ig];
    let loss = |w: &EncoderWeights<f64>, tape: &mut Tape<f64>, trainable: bool| {
        let p = w.bind(tape, |_| trainable);
        let h = hidden_states(tape, &config, &p, &batch).unwrap();
        let logits = mlm_logits(tape, &p, h).unwrap();
        let mlm = tape.softmax_cross_entropy(logits, &targets, ig).unwrap();
        let reps = sparse_activations(tape, &config, &p, &batch).unwrap();
        let s = project(tape, reps, 33);
        let s = tape.scale(s, 0.1).unwrap();
        tape.add(mlm, s).unwrap()
    };
    let value = |w: &EncoderWeights<f64>| {
        let mut tape = Tape::new();
        let l = loss(w, &mut tape, false);
        tape.value(l).unwrap().item()
    };
    let mut tape = Tape::new();
    let l = loss(&weights, &mut tape, true);
    let grads = tape.backward(l).unwrap();
    let h = 1e-5;
    let mut worst = 0.0f64;
    for name in config.parameter_names() {
        for j in 0..weights.get(&name).unwrap().numel() {
            let mut plus = weights.clone();
            plus.get_mut(&name).unwrap().data_mut()[j] += h;
            let mut minus = weights.clone();
            minus.get_mut(&name).unwrap().data_mut()[j] -= h;
            let numeric = (value(&plus) - value(&minus)) / (2.0 * h);
            worst = worst.max(rel_err(grads.named(&name).unwrap().data()[j], numeric));
        }
    }
    worst
}

// C4

fn compose_surgery(bench: &Benchmark) -> Outcome {
    let base = toy_base(bench, 5);
    let mlm_corpus: Vec<Vec<u32>> = bench.target.corpus.texts().map(|t| bench.vocab.tokenize(t, 64)).collect();
    let target = pretrain_mlm(&base, &mlm_corpus, &stage_spec(&base, Stage::PretrainTarget, 2, 6))
        .unwrap()
        .checkpoint;
    let tuned = finetune_ir(
        &base,
        &bench.source.triples,
        &bench.source.corpus,
        &bench.vocab,
        &stage_spec(&base, Stage::FinetuneSource, 2, 7),
    )
    .unwrap()
    .checkpoint;
    let mut problems = Vec::new();
    for x in [&base, &target, &tuned] {
        let s = splice(x, x).unwrap();
        if s.blob() != x.blob() || s.checksum() != x.checksum() {
            problems.push(format!("splice({0}, {0}) differs", x.stage()));
        }
    }
    let c = compose(&target, &tuned).unwrap();
    if c.blob() != splice(&target, &tuned).unwrap().blob() {
        problems.push("compose and splice disagree".into());
    }
    let k = c.config().k_domain_layers;
    let mut from_target = 0;
    for name in c.config().parameter_names() {
        let domain_side = match name.strip_prefix("layers.") {
            None => true,
            Some(rest) => rest.split('.').next().unwrap().parse::<usize>().unwrap() < k,
        };
        let parent = if domain_side { &target } else { &tuned };
        from_target += usize::from(domain_side);
        let sum = spladapt::params::hex64(spladapt::params::fnv1a(&c.weights.get(&name).unwrap().to_le_bytes()));
        if c.tensor_checksum(&name) != Some(sum.as_str()) || parent.tensor_checksum(&name) != Some(sum.as_str()) {
            problems.push(format!("{name} not from {}", parent.stage()));
        }
    }
    if changed_tensors(&base, &target).is_empty() || changed_tensors(&base, &tuned).is_empty() {
        problems.push("parents did not diverge".into());
    }
    outcome(
        problems.is_empty(),
        if problems.is_empty() {
            format!(
                "splice(X,X)==X for 3 stages; compose(target, finetuned) takes {from_target} domain tensors (k={k}) from target, rest from finetuned, by checksum"
            )
        } else {
            problems.join("; ")
        },
    )
}

// C5

fn oracle_rank(mut scored: Vec<(String, f64)>, cutoff: usize) -> Vec<Hit> {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(cutoff);
    scored.into_iter().map(|(doc_id, score)| Hit { doc_id, score }).collect()
}

fn same_ranking(got: &RankedList, want: &[Hit]) -> bool {
    got.hits.len() == want.len()
        && got
            .hits
            .iter()
            .zip(want)
            .all(|(g, w)| g.doc_id == w.doc_id && (g.score - w.score).abs() <= 1e-9)
}

/// BM25 (k1 0.9, b 0.4, Lucene idf) from raw token lists, scanning every document.
fn bm25_scan(docs: &[(String, Vec<String>)], query: &[String]) -> Vec<(String, f64)> {
    let n = docs.len() as f64;
    let avgdl = docs.iter().map(|d| d.1.len() as f64).sum::<f64>() / n;
    let mut counts: BTreeMap<&String, f64> = BTreeMap::new();
    for w in query {
        *counts.entry(w).or_default() += 1.0;
    }
    let mut out = Vec::new();
    for (id, toks) in docs {
        let mut score = 0.0;
        let mut hit = false;
        // Query words in lexicographic order, matching the index's term ids.
        for (w, mult) in &counts {
            let tf = toks.iter().filter(|t| t == w).count() as f64;
            if tf == 0.0 {
                continue;
            }
            hit = true;
            let df = docs.iter().filter(|d| d.1.contains(w)).count() as f64;
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            let norm = 0.9 * (1.0 - 0.4 + 0.4 * toks.len() as f64 / avgdl);
            score += mult * (idf * tf * (0.9 + 1.0) / (tf + norm));
        }
        if hit {
            out.push((id.clone(), score));
        }
    }
    out
}

/// Dot products over dense copies, accumulated in ascending term order.
fn impact_scan(docs: &[(String, Vec<f32>)], q: &[f32]) -> Vec<(String, f64)> {
    docs.iter()
        .filter_map(|(id, d)| {
            let mut s = 0.0f64;
            let mut hit = false;
            for (t, &qw) in q.iter().enumerate() {
                if qw > 0.0 && d[t] > 0.0 {
                    s += f64::from(qw) * f64::from(d[t]);
                    hit = true;
                }
            }
            hit.then(|| (id.clone(), s))
        })
        .collect()
}

fn retrieval_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut failures = Vec::new();
    let mut queries = 0;
    for corpus in 0..100 {
        let n = rng.random_range(1..=200usize);
        let mut ids: Vec<String> = (0..n).map(|i| format!("doc{}", i * 7 + rng.random_range(0..7))).collect();
        ids.shuffle(&mut rng);
        // Text corpus over a small lexicon so ties are common.
        let lex = rng.random_range(3..40usize);
        let docs: Vec<(String, Vec<String>)> = ids
            .iter()
            .map(|id| {
                let len = rng.random_range(1..15usize);
                (id.clone(), (0..len).map(|_| format!("w{}", rng.random_range(0..lex))).collect())
            })
            .collect();
        let texts: Vec<(String, String)> = docs.iter().map(|(id, t)| (id.clone(), t.join(" "))).collect();
        let bm25 = InvertedIndex::from_texts(texts).unwrap();
        // Impact corpus with quantized weights for exact ties.
        let dim = rng.random_range(1..60usize);
        let dense: Vec<(String, Vec<f32>)> = ids
            .iter()
            .map(|id| {
                let v = (0..dim)
                    .map(|_| if rng.random_bool(0.2) { rng.random_range(1..8) as f32 * 0.25 } else { 0.0 })
                    .collect();
                (id.clone(), v)
            })
            .collect();
        let impact = InvertedIndex::from_impacts(
            dense
                .iter()
                .map(|(id, v)| (id.clone(), SparseVector::from_dense(v.iter().copied()), 1))
                .collect(),
            dim,
        )
        .unwrap();
        for qn in 0..5 {
            queries += 1;
            let qlen = rng.random_range(1..5usize);
            let words: Vec<String> = (0..qlen).map(|_| format!("w{}", rng.random_range(0..lex + 3))).collect();
            let qv: Vec<f32> = (0..dim)
                .map(|_| if rng.random_bool(0.3) { rng.random_range(1..8) as f32 * 0.5 } else { 0.0 })
                .collect();
            for cutoff in [10, n] {
                let got = retrieve_bm25(&bm25, "q", &words.join(" "), cutoff).unwrap();
                if !same_ranking(&got, &oracle_rank(bm25_scan(&docs, &words), cutoff)) {
                    failures.push(format!("bm25 corpus {corpus} query {qn} cutoff {cutoff}"));
                }
                let got = retrieve_sparse(&impact, "q", &SparseVector::from_dense(qv.iter().copied()), cutoff).unwrap();
                if !same_ranking(&got, &oracle_rank(impact_scan(&dense, &qv), cutoff)) {
                    failures.push(format!("impact corpus {corpus} query {qn} cutoff {cutoff}"));
                }
            }
        }
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            format!("100 corpora, {queries} queries x 2 cutoffs: BM25 and impact rankings equal the scans (tol 1e-9, ties by doc id)")
        } else {
            format!("{} mismatches, first: {}", failures.len(), failures[0])
        },
    )
}

// C6

/// nDCG@k and MRR@k recomputed from the definition.
fn brute_metrics(ranked: &[String], grades: &BTreeMap<String, u32>, k: usize) -> (f64, f64) {
    let g = |d: &String| f64::from(*grades.get(d).unwrap_or(&0));
    let mut dcg = 0.0;
    let mut rr = 0.0;
    for (i, d) in ranked.iter().take(k).enumerate() {
        let rank = (i + 1) as f64;
        dcg += (2f64.powf(g(d)) - 1.0) / (rank + 1.0).log2();
        if rr == 0.0 && g(d) > 0.0 {
            rr = 1.0 / rank;
        }
    }
    let mut ideal: Vec<f64> = grades.values().map(|&x| f64::from(x)).filter(|&x| x > 0.0).collect();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &x)| (2f64.powf(x) - 1.0) / ((i + 2) as f64).log2())
        .sum();
    (if idcg > 0.0 { dcg / idcg } else { 0.0 }, rr)
}

/// ln Γ by the Lanczos approximation (g = 7, n = 9).
fn ln_gamma(x: f64) -> f64 {
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    let x = x - 1.0;
    let t = x + 7.5;
    let s: f64 = C[0] + (1..9).map(|i| C[i] / (x + i as f64)).sum::<f64>();
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + s.ln()
}

/// Two-sided tail of Student's t by Simpson quadrature of the density on [0, |t|].
fn t_two_sided(t: f64, df: f64) -> f64 {
    let c = (ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0)).exp() / (df * std::f64::consts::PI).sqrt();
    let pdf = |x: f64| c * (1.0 + x * x / df).powf(-(df + 1.0) / 2.0);
    let n = 20_000;
    let h = t.abs() / n as f64;
    let mut s = pdf(0.0) + pdf(t.abs());
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * pdf(i as f64 * h);
    }
    1.0 - 2.0 * (s * h / 3.0)
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let pool = rng.random_range(1..40usize);
        let mut qrels = Qrels::new();
        let mut grades = BTreeMap::new();
        for d in 0..pool {
            if rng.random_bool(0.5) {
                let g = rng.random_range(0..4u32);
                qrels.insert("q", &format!("d{d}"), g).unwrap();
                grades.insert(format!("d{d}"), g);
            }
        }
        let len = rng.random_range(0..25usize);
        let mut docs: Vec<String> = (0..pool + 5).map(|d| format!("d{d}")).collect();
        docs.shuffle(&mut rng);
        docs.truncate(len);
        let run = RankedList {
            query_id: "q".into(),
            hits: docs
                .iter()
                .enumerate()
                .map(|(i, d)| Hit {
                    doc_id: d.clone(),
                    score: (len - i) as f64,
                })
                .collect(),
        };
        let (n, m) = brute_metrics(&docs, &grades, 10);
        worst = worst.max((ndcg_at_k(&run, &qrels, 10) - n).abs());
        worst = worst.max((mrr_at_k(&run, &qrels, 10) - m).abs());
    }
    let t = paired_ttest(&[1.0, 2.0, 3.0, 4.0], &[0.0; 4]).unwrap();
    let oracle_p = t_two_sided(t.t, 3.0);
    let p_ok = (t.p_two_sided - 0.0305).abs() < 1e-3 && (t.p_two_sided - oracle_p).abs() < 1e-6;
    outcome(
        worst <= 1e-9 && p_ok,
        format!(
            "100 (run, qrels) pairs, worst |diff| {worst:.1e} <= 1e-9; d=[1,2,3,4]: t={:.4}, p={:.5} (quadrature {oracle_p:.5}, target 0.0305 +- 1e-3)",
            t.t, t.p_two_sided
        ),
    )
}

// C7, C8

struct SeedRow {
    seed: u64,
    zero_shot: f64,
    composed: f64,
    wo_source: f64,
    wo_pretraining: f64,
}

fn five_seed_suite(bench: &Benchmark) -> (Outcome, Vec<SeedRow>) {
    let model = bench.model_config(ModelConfig::toy(0)).with_k(1);
    let mut rows = Vec::new();
    for seed in 1..=5u64 {
        let spec = PipelineSpec {
            model,
            pretrain: TrainConfig::default(),
            finetune: TrainConfig::default(),
            seed,
        };
        let mut exp = Experiment::new(bench, spec).unwrap();
        let r = pipeline_report(&mut exp, bench, Mode::Full, 100).unwrap();
        let get = |name: &str| r.system(name).unwrap().ndcg;
        let row = SeedRow {
            seed,
            zero_shot: get(ZERO_SHOT_ROW),
            composed: get(COMPOSED_ROW),
            wo_source: get(WO_SOURCE_ROW),
            wo_pretraining: get(WO_PRETRAINING_ROW),
        };
        println!(
            "     seed {}: zero-shot {:.4} composed {:.4} wo_source {:.4} wo_pretraining {:.4}",
            row.seed, row.zero_shot, row.composed, row.wo_source, row.wo_pretraining
        );
        rows.push(row);
    }
    let margin = mean(rows.iter().map(|r| r.composed - r.zero_shot));
    let o = outcome(
        margin > 0.0,
        format!(
            "mean nDCG@10 composed {:.4} vs zero-shot {:.4}, margin {:+.4} ({:+.2} points)",
            mean(rows.iter().map(|r| r.composed)),
            mean(rows.iter().map(|r| r.zero_shot)),
            margin,
            100.0 * margin
        ),
    );
    (o, rows)
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn ablation_ordering(rows: &[SeedRow]) -> Outcome {
    if rows.is_empty() {
        return outcome(false, "no seed results");
    }
    let full = mean(rows.iter().map(|r| r.composed));
    let wo_s = mean(rows.iter().map(|r| r.wo_source));
    let wo_p = mean(rows.iter().map(|r| r.wo_pretraining));
    outcome(
        full > wo_p,
        format!(
            "full {full:.4} > wo_pretraining {wo_p:.4}; informational: full {} wo_source {wo_s:.4} (gap {:+.4}), wo_source {} wo_pretraining",
            if full >= wo_s { ">=" } else { "<" },
            full - wo_s,
            if wo_s >= wo_p { ">=" } else { "<" },
        ),
    )
}

// C9

fn sparsity_sweep(bench: &Benchmark) -> Outcome {
    let model = bench.model_config(ModelConfig::toy(0));
    let mut l0 = Vec::new();
    for lambda_d in [0.0, 1e-4, 1e-3] {
        let spec = PipelineSpec {
            model,
            pretrain: TrainConfig::default(),
            finetune: TrainConfig {
                lambda_d,
                ..TrainConfig::default()
            },
            seed: 1,
        };
        let mut exp = Experiment::new(bench, spec).unwrap();
        let c = exp.finetuned(Mode::WoSource).unwrap();
        let sys = evaluate_model(ZERO_SHOT_ROW, &c, &bench.vocab, &bench.target, 100).unwrap();
        l0.push((lambda_d, sys.sparsity.unwrap().mean_l0_docs));
    }
    let monotone = l0.windows(2).all(|w| w[1].1 <= w[0].1);
    outcome(
        monotone,
        format!(
            "mean doc L0 {}",
            l0.iter()
                .map(|(l, v)| format!("{v:.2} @ {l:e}"))
                .collect::<Vec<_>>()
                .join(" -> ")
        ),
    )
}

// C10

fn masking_distribution() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let vocab = 300u32;
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut selected = 0usize;
    while selected < 100_000 {
        let mut ids = vec![CLS];
        ids.extend((0..30).map(|_| rng.random_range(5..vocab)));
        ids.push(SEP);
        let row = mask_tokens(&ids, 0.15, vocab as usize, &mut rng);
        for a in &row.actions {
            let key = match a {
                MaskAction::Unselected => continue,
                MaskAction::Masked => "mask",
                MaskAction::Replaced => "random",
                MaskAction::Kept => "keep",
            };
            *counts.entry(key).or_default() += 1;
            selected += 1;
        }
    }
    let frac = |k: &str| counts.get(k).copied().unwrap_or(0) as f64 / selected as f64;
    let (m, r, k) = (frac("mask"), frac("random"), frac("keep"));
    let ok = (m - 0.8).abs() <= 0.01 && (r - 0.1).abs() <= 0.01 && (k - 0.1).abs() <= 0.01;
    outcome(
        ok,
        format!("{selected} selected positions: mask {m:.4}, random {r:.4}, keep {k:.4} (target 0.8/0.1/0.1 +- 0.01)"),
    )
}
