//! End-to-end experiments: shared training stages, report rows for the
//! baselines, the adapted model and its ablations, and k-sweeps.

use std::collections::BTreeMap;

use crate::data::{Dataset, SynthOutput};
use crate::encoder::{ModelConfig, SparseVector, Vocabulary};
use crate::error::{Error, Result};
use crate::eval::{evaluate_runs, index_sparsity, EvalReport, SweepReport, SweepRow, SystemEval, BM25_ROW, ZERO_SHOT_ROW};
use crate::params::{compose, Checkpoint, Stage};
use crate::retrieval::{
    build_index, encode_texts, retrieve_bm25, retrieve_sparse, IndexSource, InvertedIndex, RankedList,
};
use crate::trainer::{LogRecord, Mode, PipelineData, PipelineSpec, Stages};

pub const COMPOSED_ROW: &str = "composed";
pub const WO_SOURCE_ROW: &str = "wo_source";
pub const WO_PRETRAINING_ROW: &str = "wo_pretraining";
/// Metric depth for nDCG and MRR.
pub const METRIC_DEPTH: usize = 10;

/// Source training data, target evaluation data and their shared vocabulary.
#[derive(Clone, Debug)]
pub struct Benchmark {
    pub vocab: Vocabulary,
    pub source: Dataset,
    pub target: Dataset,
}

impl Benchmark {
    /// Build the shared vocabulary from both corpora.
    pub fn new(source: Dataset, target: Dataset, max_vocab: usize) -> Result<Self> {
        let corpora = [
            source.corpus.texts().collect::<Vec<_>>(),
            target.corpus.texts().collect::<Vec<_>>(),
        ];
        let vocab = Vocabulary::build(&corpora, max_vocab)?;
        Ok(Self { vocab, source, target })
    }

    pub fn from_synth(out: SynthOutput, max_vocab: usize) -> Result<Self> {
        Self::new(out.source, out.target, max_vocab)
    }

    pub fn data(&self) -> PipelineData<'_> {
        PipelineData {
            vocab: &self.vocab,
            source: &self.source.corpus,
            target: &self.target.corpus,
            triples: &self.source.triples,
        }
    }

    /// Model config sized to this vocabulary.
    pub fn model_config(&self, template: ModelConfig) -> ModelConfig {
        ModelConfig {
            vocab_size: self.vocab.len(),
            ..template
        }
    }
}

/// BM25 over the dataset's raw text.
pub fn bm25_runs(ds: &Dataset, cutoff: usize) -> Result<(InvertedIndex, Vec<RankedList>)> {
    let index = build_index(&ds.corpus, &IndexSource::Frequency)?;
    let runs = ds
        .queries
        .iter()
        .map(|q| retrieve_bm25(&index, &q.id, &q.text, cutoff))
        .collect::<Result<_>>()?;
    Ok((index, runs))
}

/// Encoded queries, the impact index and the resulting runs of one model.
pub struct SparseRuns {
    pub index: InvertedIndex,
    pub queries: Vec<SparseVector>,
    pub runs: Vec<RankedList>,
}

pub fn sparse_runs(ckpt: &Checkpoint, vocab: &Vocabulary, ds: &Dataset, cutoff: usize) -> Result<SparseRuns> {
    let index = build_index(
        &ds.corpus,
        &IndexSource::Encoder {
            checkpoint: ckpt,
            vocab,
        },
    )?;
    let queries = encode_texts(ckpt, vocab, ds.queries.iter().map(|q| q.text.as_str()))?;
    let runs = ds
        .queries
        .iter()
        .zip(&queries)
        .map(|(q, v)| retrieve_sparse(&index, &q.id, v, cutoff))
        .collect::<Result<_>>()?;
    Ok(SparseRuns { index, queries, runs })
}

/// Score a sparse model on `ds`, including its sparsity statistics.
pub fn evaluate_model(name: &str, ckpt: &Checkpoint, vocab: &Vocabulary, ds: &Dataset, cutoff: usize) -> Result<SystemEval> {
    evaluate_model_runs(name, ckpt, vocab, ds, cutoff).map(|(sys, _)| sys)
}

/// [`evaluate_model`], also returning the runs it scored.
pub fn evaluate_model_runs(
    name: &str,
    ckpt: &Checkpoint,
    vocab: &Vocabulary,
    ds: &Dataset,
    cutoff: usize,
) -> Result<(SystemEval, SparseRuns)> {
    let r = sparse_runs(ckpt, vocab, ds, cutoff)?;
    let mut sys = evaluate_runs(name, &r.runs, &ds.qrels, METRIC_DEPTH);
    sys.sparsity = Some(index_sparsity(&r.index, &r.queries)?);
    Ok((sys, r))
}

pub fn evaluate_bm25(ds: &Dataset, cutoff: usize) -> Result<SystemEval> {
    let (_, runs) = bm25_runs(ds, cutoff)?;
    Ok(evaluate_runs(BM25_ROW, &runs, &ds.qrels, METRIC_DEPTH))
}

/// Lazily trained stages shared between a mode's models and the ablation
/// rows. Each stage is trained at most once.
pub struct Experiment<'a> {
    stages: Stages<'a>,
    cache: BTreeMap<&'static str, Checkpoint>,
    log: Vec<LogRecord>,
}

const BASE: &str = "base";
const SOURCE: &str = "pretrain_source";
const TARGET: &str = "pretrain_target";
const FT_SOURCE: &str = "finetune_from_source";
const FT_BASE: &str = "finetune_from_base";

impl<'a> Experiment<'a> {
    pub fn new(bench: &'a Benchmark, spec: PipelineSpec) -> Result<Self> {
        Ok(Self {
            stages: Stages::new(bench.data(), spec)?,
            cache: BTreeMap::new(),
            log: Vec::new(),
        })
    }

    pub fn spec(&self) -> &PipelineSpec {
        &self.stages.spec
    }

    /// Training log of every stage run so far, in run order.
    pub fn log(&self) -> &[LogRecord] {
        &self.log
    }

    fn get(&mut self, key: &'static str) -> Result<Checkpoint> {
        if let Some(c) = self.cache.get(key) {
            return Ok(c.clone());
        }
        let ckpt = match key {
            BASE => self.stages.base()?,
            SOURCE | TARGET => {
                let base = self.get(BASE)?;
                let stage = if key == SOURCE { Stage::PretrainSource } else { Stage::PretrainTarget };
                let out = self.stages.pretrain(&base, stage)?;
                self.log.extend(out.log);
                out.checkpoint
            }
            FT_SOURCE | FT_BASE => {
                let init = self.get(if key == FT_SOURCE { SOURCE } else { BASE })?;
                let out = self.stages.finetune(&init)?;
                self.log.extend(out.log);
                out.checkpoint
            }
            other => return Err(Error::Stage(format!("unknown stage key {other}"))),
        };
        self.cache.insert(key, ckpt.clone());
        Ok(ckpt)
    }

    pub fn base(&mut self) -> Result<Checkpoint> {
        self.get(BASE)
    }

    pub fn pretrain_source(&mut self) -> Result<Checkpoint> {
        self.get(SOURCE)
    }

    pub fn pretrain_target(&mut self) -> Result<Checkpoint> {
        self.get(TARGET)
    }

    /// The fine-tuned model of `mode`: from the source model in full mode,
    /// otherwise from the base model.
    pub fn finetuned(&mut self, mode: Mode) -> Result<Checkpoint> {
        self.get(if mode == Mode::Full { FT_SOURCE } else { FT_BASE })
    }

    /// The composed model of `mode`.
    pub fn composed(&mut self, mode: Mode) -> Result<Checkpoint> {
        let task = self.finetuned(mode)?;
        let domain = match mode {
            Mode::WoPretraining => self.base()?,
            _ => self.pretrain_target()?,
        };
        compose(&domain, &task)
    }

    /// Checkpoints of one mode in stage order, base first.
    pub fn mode_checkpoints(&mut self, mode: Mode) -> Result<Vec<Checkpoint>> {
        let mut out = vec![self.base()?];
        if mode == Mode::Full {
            out.push(self.pretrain_source()?);
        }
        if mode != Mode::WoPretraining {
            out.push(self.pretrain_target()?);
        }
        out.push(self.finetuned(mode)?);
        out.push(self.composed(mode)?);
        Ok(out)
    }
}

/// A report together with the ranked lists behind each row.
pub struct PipelineEval {
    pub report: EvalReport,
    pub runs: Vec<(String, Vec<RankedList>)>,
}

/// Target-side report for one mode: BM25, zero-shot (the mode's fine-tuned
/// model), composed (the mode's composed model) and both ablations, with
/// significance against the two baselines.
pub fn pipeline_report(exp: &mut Experiment<'_>, bench: &Benchmark, mode: Mode, cutoff: usize) -> Result<EvalReport> {
    pipeline_eval(exp, bench, mode, cutoff).map(|e| e.report)
}

pub fn pipeline_eval(exp: &mut Experiment<'_>, bench: &Benchmark, mode: Mode, cutoff: usize) -> Result<PipelineEval> {
    let ds = &bench.target;
    let mut report = EvalReport::new("target", METRIC_DEPTH);
    let (_, bm25) = bm25_runs(ds, cutoff)?;
    report.push(evaluate_runs(BM25_ROW, &bm25, &ds.qrels, METRIC_DEPTH));
    let mut runs = vec![(BM25_ROW.to_string(), bm25)];
    let rows = [
        (ZERO_SHOT_ROW, exp.finetuned(mode)?),
        (COMPOSED_ROW, exp.composed(mode)?),
        (WO_SOURCE_ROW, exp.composed(Mode::WoSource)?),
        (WO_PRETRAINING_ROW, exp.composed(Mode::WoPretraining)?),
    ];
    for (name, ckpt) in &rows {
        let (sys, r) = evaluate_model_runs(name, ckpt, &bench.vocab, ds, cutoff)?;
        report.push(sys);
        runs.push((name.to_string(), r.runs));
    }
    report.compute_significance(&[BM25_ROW, ZERO_SHOT_ROW])?;
    Ok(PipelineEval { report, runs })
}

/// One full-mode run per `k`, with a zero-shot reference: the model
/// fine-tuned from the base checkpoint at the first `k`, without pre-training.
pub fn sweep_k(bench: &Benchmark, spec: PipelineSpec, ks: &[usize], cutoff: usize) -> Result<SweepReport> {
    let mut sweep = SweepReport::default();
    for (i, &k) in ks.iter().enumerate() {
        let spec_k = PipelineSpec {
            model: spec.model.with_k(k),
            ..spec
        };
        let mut exp = Experiment::new(bench, spec_k)?;
        if i == 0 {
            let zs = evaluate_model(ZERO_SHOT_ROW, &exp.finetuned(Mode::WoPretraining)?, &bench.vocab, &bench.target, cutoff)?;
            sweep.zero_shot = sweep_row(ZERO_SHOT_ROW.to_string(), &zs);
        }
        let sys = evaluate_model(COMPOSED_ROW, &exp.composed(Mode::Full)?, &bench.vocab, &bench.target, cutoff)?;
        sweep.rows.push(sweep_row(format!("k={k}"), &sys));
    }
    Ok(sweep)
}

fn sweep_row(label: String, sys: &SystemEval) -> SweepRow {
    SweepRow {
        label,
        ndcg: sys.ndcg,
        mean_doc_l0: sys.sparsity.map_or(0.0, |s| s.mean_l0_docs),
    }
}
