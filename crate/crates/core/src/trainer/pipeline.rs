use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{Corpus, TrainTriple};
use crate::encoder::{EncoderWeights, ModelConfig, Vocabulary};
use crate::error::{Error, Result};
use crate::params::{compose, Checkpoint, ParameterPartition, Stage};
use crate::trainer::stage::{finetune_ir, pretrain_mlm, LogRecord, StageOutput, StageSpec, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Source and target pre-training, fine-tuning from the source model.
    Full,
    /// No source pre-training: fine-tuning starts from the base model.
    WoSource,
    /// No pre-training at all; the result is a zero-shot model.
    WoPretraining,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Full, Mode::WoSource, Mode::WoPretraining];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::WoSource => "wo_source",
            Mode::WoPretraining => "wo_pretraining",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode `{s}` (expected full, wo_source or wo_pretraining)")))
    }
}

/// Model shape, per-stage hyper-parameters and the master seed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineSpec {
    pub model: ModelConfig,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    pub seed: u64,
}

/// Seed offsets so each stage draws from its own stream.
pub const BASE_SEED_OFFSET: u64 = 0;
pub const SOURCE_SEED_OFFSET: u64 = 1;
pub const TARGET_SEED_OFFSET: u64 = 2;
pub const FINETUNE_SEED_OFFSET: u64 = 3;

/// Tokenized corpora and supervision shared by all stages.
pub struct PipelineData<'a> {
    pub vocab: &'a Vocabulary,
    pub source: &'a Corpus,
    pub target: &'a Corpus,
    pub triples: &'a [TrainTriple],
}

impl PipelineData<'_> {
    fn tokenized(&self, corpus: &Corpus, max: usize) -> Vec<Vec<u32>> {
        corpus.texts().map(|t| self.vocab.tokenize(t, max)).collect()
    }
}

/// Runs individual stages with the pipeline's seeding rules.
pub struct Stages<'a> {
    pub data: PipelineData<'a>,
    pub spec: PipelineSpec,
    partition: ParameterPartition,
}

impl<'a> Stages<'a> {
    pub fn new(data: PipelineData<'a>, spec: PipelineSpec) -> Result<Self> {
        spec.model.validate()?;
        if spec.model.vocab_size != data.vocab.len() {
            return Err(Error::Config(format!(
                "model vocab_size {} differs from vocabulary size {}",
                spec.model.vocab_size,
                data.vocab.len()
            )));
        }
        let partition = ParameterPartition::for_k(&spec.model, spec.model.k_domain_layers as i64)?;
        Ok(Self { data, spec, partition })
    }

    pub fn partition(&self) -> &ParameterPartition {
        &self.partition
    }

    /// Stage (a): the seeded initial model.
    pub fn base(&self) -> Result<Checkpoint> {
        let w = EncoderWeights::init(self.spec.model, self.spec.seed.wrapping_add(BASE_SEED_OFFSET))?;
        Ok(Checkpoint::new(w, Stage::Base, None, Vec::new()))
    }

    /// Stages (b.1) and (b.2).
    pub fn pretrain(&self, base: &Checkpoint, stage: Stage) -> Result<StageOutput> {
        let (corpus, offset) = match stage {
            Stage::PretrainSource => (self.data.source, SOURCE_SEED_OFFSET),
            Stage::PretrainTarget => (self.data.target, TARGET_SEED_OFFSET),
            other => return Err(Error::Stage(format!("{other} is not a pre-training stage"))),
        };
        let spec = StageSpec::new(stage, &self.partition, self.spec.pretrain, self.spec.seed.wrapping_add(offset))?;
        pretrain_mlm(base, &self.data.tokenized(corpus, self.spec.model.max_seq_len), &spec)
    }

    /// Stage (c), from either the source model or the base model.
    pub fn finetune(&self, init: &Checkpoint) -> Result<StageOutput> {
        let spec = StageSpec::new(
            Stage::FinetuneSource,
            &self.partition,
            self.spec.finetune,
            self.spec.seed.wrapping_add(FINETUNE_SEED_OFFSET),
        )?;
        finetune_ir(init, self.data.triples, self.data.source, self.data.vocab, &spec)
    }
}

/// Checkpoints produced by one pipeline run.
#[derive(Clone, Debug)]
pub struct PipelineRun {
    pub mode: Mode,
    pub base: Checkpoint,
    pub pretrain_source: Option<Checkpoint>,
    pub pretrain_target: Option<Checkpoint>,
    pub finetune: Checkpoint,
    pub composed: Checkpoint,
    pub log: Vec<LogRecord>,
}

impl PipelineRun {
    /// Every checkpoint that was trained or composed (the base model excluded).
    pub fn produced(&self) -> Vec<&Checkpoint> {
        let mut out: Vec<&Checkpoint> = Vec::new();
        out.extend(self.pretrain_source.as_ref());
        out.extend(self.pretrain_target.as_ref());
        out.push(&self.finetune);
        out.push(&self.composed);
        out
    }
}

/// Stages (a) to (d). Without pre-training the composed model takes its
/// domain subset from the base model, which fine-tuning left untouched, so
/// it equals the fine-tuned model tensor for tensor.
pub fn run_pipeline(data: PipelineData<'_>, spec: PipelineSpec, mode: Mode) -> Result<PipelineRun> {
    let stages = Stages::new(data, spec)?;
    let base = stages.base()?;
    let mut log = Vec::new();
    let mut keep = |out: StageOutput| {
        log.extend(out.log);
        out.checkpoint
    };
    let pretrain_source = match mode {
        Mode::Full => Some(keep(stages.pretrain(&base, Stage::PretrainSource)?)),
        _ => None,
    };
    let pretrain_target = match mode {
        Mode::WoPretraining => None,
        _ => Some(keep(stages.pretrain(&base, Stage::PretrainTarget)?)),
    };
    let finetune = keep(stages.finetune(pretrain_source.as_ref().unwrap_or(&base))?);
    let composed = compose(pretrain_target.as_ref().unwrap_or(&base), &finetune)?;
    Ok(PipelineRun {
        mode,
        base,
        pretrain_source,
        pretrain_target,
        finetune,
        composed,
        log,
    })
}
