use std::collections::{BTreeSet, HashMap};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_step, AdamConfig, AdamState, Tape};
use crate::data::{Corpus, TrainTriple};
use crate::encoder::{hidden_states, is_special, mlm_logits, sparse_pool, Batch, Vocabulary};
use crate::error::{Error, Result};
use crate::params::{Checkpoint, ParameterPartition, Stage};
use crate::trainer::loss::ranking_loss;
use crate::trainer::masking::{MlmBatch, DEFAULT_MASK_PROB, IGNORE};

/// Hyper-parameters shared by both kinds of training stage.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub mask_prob: f64,
    pub lambda_q: f64,
    pub lambda_d: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 16,
            lr: 1e-3,
            mask_prob: DEFAULT_MASK_PROB,
            lambda_q: 1e-3,
            lambda_d: 1e-4,
        }
    }
}

/// Everything one stage needs besides its data.
#[derive(Clone, Debug, PartialEq)]
pub struct StageSpec {
    pub stage: Stage,
    pub k: usize,
    pub frozen: BTreeSet<String>,
    pub train: TrainConfig,
    pub seed: u64,
}

impl StageSpec {
    /// Pre-training stages freeze the task subset, fine-tuning freezes the
    /// domain subset.
    pub fn new(stage: Stage, partition: &ParameterPartition, train: TrainConfig, seed: u64) -> Result<Self> {
        let frozen = match stage {
            Stage::PretrainSource | Stage::PretrainTarget => partition.frozen_for_pretraining().clone(),
            Stage::FinetuneSource => partition.frozen_for_finetuning().clone(),
            other => return Err(Error::Stage(format!("{other} is not a training stage"))),
        };
        if train.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(train.mask_prob > 0.0 && train.mask_prob < 1.0) {
            return Err(Error::Config(format!("mask_prob {} not in (0, 1)", train.mask_prob)));
        }
        Ok(Self {
            stage,
            k: partition.k,
            frozen,
            train,
            seed,
        })
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.train.lr,
            ..AdamConfig::default()
        }
    }
}

/// One line of the JSON-lines training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    pub stage: Stage,
    pub loss: f64,
    pub flops_term: f64,
}

#[derive(Clone, Debug)]
pub struct StageOutput {
    pub checkpoint: Checkpoint,
    pub log: Vec<LogRecord>,
}

fn check_k(input: &Checkpoint, spec: &StageSpec) -> Result<()> {
    if input.manifest.k != spec.k {
        return Err(Error::Incompatible(format!(
            "checkpoint k={} but stage partition k={}",
            input.manifest.k, spec.k
        )));
    }
    Ok(())
}

/// Continue MLM training of the domain subset on `corpus` (token ids with
/// `[CLS]`/`[SEP]`). Steps whose batch has no selected position are skipped
/// but still count towards the budget.
pub fn pretrain_mlm(base: &Checkpoint, corpus: &[Vec<u32>], spec: &StageSpec) -> Result<StageOutput> {
    if !matches!(spec.stage, Stage::PretrainSource | Stage::PretrainTarget) {
        return Err(Error::Stage(format!("pretrain_mlm cannot run stage {}", spec.stage)));
    }
    check_k(base, spec)?;
    let usable: Vec<&[u32]> = corpus
        .iter()
        .filter(|s| s.iter().any(|&t| !is_special(t)))
        .map(Vec::as_slice)
        .collect();
    if usable.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let config = base.weights.config;
    let mut weights = base.weights.clone();
    let mut state = AdamState::new(spec.adam(), weights.tensors());
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut log = Vec::with_capacity(spec.train.steps);
    for step in 0..spec.train.steps {
        let seqs: Vec<&[u32]> = (0..spec.train.batch_size)
            .map(|_| usable[rng.random_range(0..usable.len())])
            .collect();
        let masked = MlmBatch::mask(&seqs, spec.train.mask_prob, config.vocab_size, &mut rng);
        if masked.selected() == 0 {
            continue;
        }
        let batch = Batch::new(&masked.inputs(), &config)?;
        let labels = masked.padded_labels(batch.keys.seq_len);
        let mut tape = Tape::new();
        let p = weights.bind(&mut tape, |n| !spec.frozen.contains(n));
        let h = hidden_states(&mut tape, &config, &p, &batch)?;
        // Only supervised rows need the vocabulary projection.
        let rows: Vec<usize> = (0..labels.len()).filter(|&r| labels[r] != IGNORE).collect();
        let targets: Vec<usize> = rows.iter().map(|&r| labels[r]).collect();
        let h = tape.gather(h, &rows)?;
        let logits = mlm_logits(&mut tape, &p, h)?;
        let loss = tape.softmax_cross_entropy(logits, &targets, IGNORE)?;
        let value = tape.value(loss)?.item();
        let grads = tape.backward(loss)?;
        adam_step(weights.tensors_mut(), grads.named_map(), &mut state, &spec.frozen)?;
        log::debug!("{} step {step}: mlm loss {value:.5}", spec.stage);
        log.push(LogRecord {
            step,
            stage: spec.stage,
            loss: f64::from(value),
            flops_term: 0.0,
        });
    }
    let domain = match spec.stage {
        Stage::PretrainSource => "source",
        _ => "target",
    };
    Ok(StageOutput {
        checkpoint: Checkpoint::new(weights, spec.stage, Some(domain), vec![base.link("init")]),
        log,
    })
}

/// Fine-tune the task subset with the ranking loss on source triples.
pub fn finetune_ir(
    input: &Checkpoint,
    triples: &[TrainTriple],
    corpus: &Corpus,
    vocab: &Vocabulary,
    spec: &StageSpec,
) -> Result<StageOutput> {
    if spec.stage != Stage::FinetuneSource {
        return Err(Error::Stage(format!("finetune_ir cannot run stage {}", spec.stage)));
    }
    if !matches!(input.stage(), Stage::PretrainSource | Stage::Base) {
        return Err(Error::Stage(format!(
            "fine-tuning starts from {} or {}, got {}",
            Stage::PretrainSource,
            Stage::Base,
            input.stage()
        )));
    }
    check_k(input, spec)?;
    let missing = corpus.missing(triples.iter().flat_map(|t| [t.pos.as_str(), t.neg.as_str()]));
    if !missing.is_empty() {
        return Err(Error::UnknownDocs(missing));
    }
    let config = input.weights.config;
    let max = config.max_seq_len;
    let mut doc_ids: HashMap<&str, Vec<u32>> = HashMap::new();
    for t in triples {
        for id in [&t.pos, &t.neg] {
            doc_ids
                .entry(id.as_str())
                .or_insert_with(|| vocab.tokenize(&corpus.get(id).expect("checked").text, max));
        }
    }
    let has_content = |s: &[u32]| s.iter().any(|&t| !is_special(t));
    let examples: Vec<(Vec<u32>, &[u32], &[u32])> = triples
        .iter()
        .map(|t| (vocab.tokenize(&t.query, max), doc_ids[t.pos.as_str()].as_slice(), doc_ids[t.neg.as_str()].as_slice()))
        .filter(|(q, p, n)| has_content(q) && has_content(p) && has_content(n))
        .collect();
    if examples.len() < triples.len() {
        log::warn!(
            "{} triple(s) dropped: query or document has no in-vocabulary token",
            triples.len() - examples.len()
        );
    }
    if examples.is_empty() && spec.train.steps > 0 {
        return Err(Error::Config("no usable training triples".into()));
    }

    let mut weights = input.weights.clone();
    let mut state = AdamState::new(spec.adam(), weights.tensors());
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut log = Vec::with_capacity(spec.train.steps);
    for step in 0..spec.train.steps {
        let picked: Vec<&(Vec<u32>, &[u32], &[u32])> = (0..spec.train.batch_size)
            .map(|_| examples.choose(&mut rng).expect("non-empty"))
            .collect();
        let q: Vec<Vec<u32>> = picked.iter().map(|e| e.0.clone()).collect();
        let pos: Vec<Vec<u32>> = picked.iter().map(|e| e.1.to_vec()).collect();
        let neg: Vec<Vec<u32>> = picked.iter().map(|e| e.2.to_vec()).collect();
        let mut tape = Tape::new();
        let p = weights.bind(&mut tape, |n| !spec.frozen.contains(n));
        let encode = |tape: &mut Tape<f32>, seqs: &[Vec<u32>]| -> Result<_> {
            let batch = Batch::new(seqs, &config)?;
            let h = hidden_states(tape, &config, &p, &batch)?;
            let logits = mlm_logits(tape, &p, h)?;
            sparse_pool(tape, logits, &batch.content)
        };
        let qv = encode(&mut tape, &q)?;
        let pv = encode(&mut tape, &pos)?;
        let nv = encode(&mut tape, &neg)?;
        let loss = ranking_loss(&mut tape, qv, pv, nv, spec.train.lambda_q, spec.train.lambda_d)?;
        let value = tape.value(loss.total)?.item();
        let flops = tape.value(loss.flops)?.item();
        let grads = tape.backward(loss.total)?;
        adam_step(weights.tensors_mut(), grads.named_map(), &mut state, &spec.frozen)?;
        log::debug!("{} step {step}: loss {value:.5} (flops {flops:.5})", spec.stage);
        log.push(LogRecord {
            step,
            stage: spec.stage,
            loss: f64::from(value),
            flops_term: f64::from(flops),
        });
    }
    Ok(StageOutput {
        checkpoint: Checkpoint::new(weights, Stage::FinetuneSource, Some("source"), vec![input.link("init")]),
        log,
    })
}
