//! On-disk layout of a working directory:
//!
//! ```text
//! vocab.txt
//! base/                      stage (a)
//! checkpoints/<stage>/       pretrain_source, pretrain_target, finetune_source, composed
//! indexes/<model>/
//! runs/<model>.trec
//! report.json, report.txt, sweep.json, sweep.txt
//! train_log.jsonl
//! ```

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use spladapt::encoder::Vocabulary;
use spladapt::params::{Checkpoint, Stage};
use spladapt::trainer::LogRecord;
use spladapt::Error;

pub struct Workdir {
    root: PathBuf,
}

impl Workdir {
    pub fn new(root: &Path) -> Self {
        Self { root: root.to_path_buf() }
    }

    pub fn checkpoint_dir(&self, stage: Stage) -> PathBuf {
        match stage {
            Stage::Base => self.root.join("base"),
            other => self.root.join("checkpoints").join(other.as_str()),
        }
    }

    pub fn index_dir(&self, model: &str) -> PathBuf {
        self.root.join("indexes").join(model)
    }

    pub fn run_path(&self, model: &str) -> PathBuf {
        self.root.join("runs").join(format!("{model}.trec"))
    }

    pub fn runs_dir(&self) -> PathBuf {
        self.root.join("runs")
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Load the checkpoint of `stage`; a missing one is reported by its stage tag.
    pub fn load_checkpoint(&self, stage: Stage) -> Result<Checkpoint> {
        let dir = self.checkpoint_dir(stage);
        if !dir.exists() {
            return Err(Error::MissingArtifact {
                stage: stage.as_str().to_string(),
                path: dir,
            }
            .into());
        }
        let ckpt = Checkpoint::load(&dir).with_context(|| format!("loading {stage} checkpoint"))?;
        if ckpt.stage() != stage {
            anyhow::bail!("{} holds a {} checkpoint, expected {stage}", dir.display(), ckpt.stage());
        }
        Ok(ckpt)
    }

    pub fn save_checkpoint(&self, ckpt: &Checkpoint) -> Result<PathBuf> {
        let dir = self.checkpoint_dir(ckpt.stage());
        ckpt.save(&dir)?;
        log::info!("wrote {} checkpoint {} to {}", ckpt.stage(), ckpt.checksum(), dir.display());
        Ok(dir)
    }

    /// Write the vocabulary, or check it against the one already stored.
    pub fn sync_vocab(&self, vocab: &Vocabulary) -> Result<()> {
        let path = self.file("vocab.txt");
        if path.exists() {
            let stored = Vocabulary::load(&path)?;
            anyhow::ensure!(
                stored == *vocab,
                "{} was built from different data; use a fresh workdir",
                path.display()
            );
            return Ok(());
        }
        vocab.save(&path)?;
        Ok(())
    }

    pub fn append_log(&self, records: &[LogRecord]) -> Result<()> {
        let path = self.file("train_log.jsonl");
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .with_context(|| format!("opening {}", path.display()))?;
        for r in records {
            writeln!(f, "{}", serde_json::to_string(r)?)?;
        }
        Ok(())
    }

    pub fn reset_log(&self) -> Result<()> {
        let path = self.file("train_log.jsonl");
        if path.exists() {
            fs::remove_file(&path)?;
        }
        Ok(())
    }

    pub fn write(&self, name: &str, contents: &str) -> Result<PathBuf> {
        let path = self.file(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
