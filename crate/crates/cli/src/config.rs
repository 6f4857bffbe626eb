use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};
use spladapt::data::{ingest, Dataset};
use spladapt::encoder::ModelConfig;
use spladapt::trainer::{Mode, PipelineSpec, TrainConfig};

/// Files of one dataset. Relative paths are resolved against the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetPaths {
    pub corpus: PathBuf,
    pub queries: PathBuf,
    pub qrels: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub triples: Option<PathBuf>,
}

impl DatasetPaths {
    fn resolve(&mut self, root: &Path) {
        for p in [&mut self.corpus, &mut self.queries, &mut self.qrels] {
            *p = root.join(&*p);
        }
        if let Some(t) = &mut self.triples {
            *t = root.join(&*t);
        }
    }

    fn check(&self, what: &str) -> Result<()> {
        let mut files = vec![&self.corpus, &self.queries, &self.qrels];
        files.extend(self.triples.as_ref());
        for f in files {
            ensure!(f.is_file(), "{what} file {} does not exist", f.display());
        }
        Ok(())
    }

    pub fn load(&self) -> Result<Dataset> {
        ingest(&self.corpus, &self.queries, &self.qrels, self.triples.as_deref())
            .with_context(|| format!("loading dataset from {}", self.corpus.display()))
    }
}

/// Model shape without the vocabulary size, which comes from the data.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelShape {
    pub layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ffn: usize,
    pub max_seq_len: usize,
    pub k: usize,
}

impl Default for ModelShape {
    fn default() -> Self {
        let toy = ModelConfig::toy(0);
        Self {
            layers: toy.layers,
            d_model: toy.d_model,
            n_heads: toy.n_heads,
            d_ffn: toy.d_ffn,
            max_seq_len: toy.max_seq_len,
            k: toy.k_domain_layers,
        }
    }
}

impl ModelShape {
    pub fn with_vocab(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            layers: self.layers,
            d_model: self.d_model,
            n_heads: self.n_heads,
            d_ffn: self.d_ffn,
            max_seq_len: self.max_seq_len,
            k_domain_layers: self.k,
        }
    }
}

fn default_mode() -> Mode {
    Mode::Full
}

fn default_sweep() -> Vec<usize> {
    vec![0, 1, 2, 4]
}

fn default_seed() -> u64 {
    1
}

fn default_max_vocab() -> usize {
    30_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Source corpus with held-out queries, qrels and training triples.
    pub source: DatasetPaths,
    /// Target corpus with evaluation queries and qrels.
    pub target: DatasetPaths,
    pub workdir: PathBuf,
    #[serde(default)]
    pub model: ModelShape,
    #[serde(default)]
    pub pretrain: TrainConfig,
    #[serde(default)]
    pub finetune: TrainConfig,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    #[serde(default = "default_sweep")]
    pub sweep: Vec<usize>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_max_vocab")]
    pub max_vocab: usize,
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub mode: Option<Mode>,
    pub k: Option<usize>,
    pub seed: Option<u64>,
    pub workdir: Option<PathBuf>,
}

impl PipelineConfig {
    /// Parse, resolve paths relative to the file, apply overrides and validate.
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: PipelineConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let root = path.parent().unwrap_or(Path::new(""));
        cfg.source.resolve(root);
        cfg.target.resolve(root);
        cfg.workdir = root.join(&cfg.workdir);
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(m) = o.mode {
            self.mode = m;
        }
        if let Some(k) = o.k {
            self.model.k = k;
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(w) = &o.workdir {
            self.workdir = w.clone();
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.source.check("source")?;
        self.target.check("target")?;
        ensure!(self.source.triples.is_some(), "source.triples is required for fine-tuning");
        // Any positive vocabulary size will do for shape checks.
        self.model.with_vocab(1).validate()?;
        for &k in &self.sweep {
            ensure!(
                k < self.model.layers,
                "sweep value k={k} must be below the layer count {}",
                self.model.layers
            );
        }
        ensure!(self.max_vocab > 0, "max_vocab must be positive");
        fs::create_dir_all(&self.workdir)
            .with_context(|| format!("creating workdir {}", self.workdir.display()))?;
        let probe = self.workdir.join(".write-probe");
        if fs::write(&probe, b"").is_err() {
            bail!("workdir {} is not writable", self.workdir.display());
        }
        let _ = fs::remove_file(probe);
        Ok(())
    }

    pub fn spec(&self, vocab_size: usize) -> PipelineSpec {
        PipelineSpec {
            model: self.model.with_vocab(vocab_size),
            pretrain: self.pretrain,
            finetune: self.finetune,
            seed: self.seed,
        }
    }
}
