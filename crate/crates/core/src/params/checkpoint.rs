//! On-disk checkpoint: a directory holding `manifest.json` and `tensors.bin`.
//!
//! `tensors.bin` is the concatenation of every tensor as little-endian f32,
//! row-major, in lexicographic name order. Each manifest record carries the
//! tensor's byte offset and its 64-bit FNV-1a checksum (16 hex digits); the
//! manifest also carries the checksum of the whole blob, which is the
//! identity used in provenance links.

use std::collections::BTreeMap;
use std::fmt;
use std::hash::Hasher;
use std::path::{Path, PathBuf};

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::encoder::{EncoderWeights, ModelConfig};
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TENSORS_FILE: &str = "tensors.bin";

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

pub fn hex64(x: u64) -> String {
    format!("{x:016x}")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Base,
    PretrainSource,
    PretrainTarget,
    FinetuneSource,
    Composed,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Base => "base",
            Stage::PretrainSource => "pretrain_source",
            Stage::PretrainTarget => "pretrain_target",
            Stage::FinetuneSource => "finetune_source",
            Stage::Composed => "composed",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub offset: u64,
    pub checksum: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParentLink {
    /// `init`, `domain` or `task`.
    pub role: String,
    pub stage: Stage,
    pub checksum: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub config: ModelConfig,
    pub stage: Stage,
    /// Corpus the domain subset was last adapted to (`source`, `target`), if any.
    pub domain: Option<String>,
    pub k: usize,
    pub parents: Vec<ParentLink>,
    pub tensors: Vec<TensorRecord>,
    pub checksum: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub weights: EncoderWeights<f32>,
}

impl Checkpoint {
    pub fn new(weights: EncoderWeights<f32>, stage: Stage, domain: Option<&str>, parents: Vec<ParentLink>) -> Self {
        let mut tensors = Vec::with_capacity(weights.tensors().len());
        let mut offset = 0u64;
        let mut whole = FnvHasher::default();
        for (name, t) in weights.tensors() {
            let bytes = t.to_le_bytes();
            whole.write(&bytes);
            tensors.push(TensorRecord {
                name: name.clone(),
                shape: t.shape().to_vec(),
                dtype: "f32".into(),
                offset,
                checksum: hex64(fnv1a(&bytes)),
            });
            offset += bytes.len() as u64;
        }
        let manifest = Manifest {
            schema_version: SCHEMA_VERSION,
            config: weights.config,
            stage,
            domain: domain.map(str::to_string),
            k: weights.config.k_domain_layers,
            parents,
            tensors,
            checksum: hex64(whole.finish()),
        };
        Self { manifest, weights }
    }

    pub fn stage(&self) -> Stage {
        self.manifest.stage
    }

    pub fn config(&self) -> &ModelConfig {
        &self.weights.config
    }

    /// Checksum of the tensor blob.
    pub fn checksum(&self) -> &str {
        &self.manifest.checksum
    }

    pub fn tensor_checksum(&self, name: &str) -> Option<&str> {
        self.manifest
            .tensors
            .iter()
            .find(|r| r.name == name)
            .map(|r| r.checksum.as_str())
    }

    /// Link naming this checkpoint as a parent in `role`.
    pub fn link(&self, role: &str) -> ParentLink {
        ParentLink {
            role: role.into(),
            stage: self.stage(),
            checksum: self.checksum().to_string(),
        }
    }

    pub fn blob(&self) -> Vec<u8> {
        self.weights.tensors().values().flat_map(Tensor::to_le_bytes).collect()
    }

    /// Write via a sibling temp directory renamed into place.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let parent = dir.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        let name = dir
            .file_name()
            .ok_or_else(|| Error::Config(format!("bad checkpoint path {}", dir.display())))?;
        let tmp = parent.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
        if tmp.exists() {
            std::fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        }
        std::fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let manifest = serde_json::to_string_pretty(&self.manifest)?;
        write(&tmp.join(MANIFEST_FILE), manifest.as_bytes())?;
        write(&tmp.join(TENSORS_FILE), &self.blob())?;
        if dir.exists() {
            std::fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::rename(&tmp, dir).map_err(|e| Error::io(dir, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mpath = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        if manifest.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint schema {}",
                manifest.schema_version
            )));
        }
        let bpath = dir.join(TENSORS_FILE);
        let blob = std::fs::read(&bpath).map_err(|e| Error::io(&bpath, e))?;
        Self::from_parts(manifest, &blob)
    }

    /// Rebuild from a manifest and blob, verifying every checksum.
    pub fn from_parts(manifest: Manifest, blob: &[u8]) -> Result<Self> {
        let mut tensors = BTreeMap::new();
        for rec in &manifest.tensors {
            if rec.dtype != "f32" {
                return Err(Error::Corrupt {
                    name: rec.name.clone(),
                    detail: format!("unsupported dtype {}", rec.dtype),
                });
            }
            let nbytes = rec.shape.iter().product::<usize>() * 4;
            let start = rec.offset as usize;
            let bytes = blob.get(start..start + nbytes).ok_or_else(|| Error::Corrupt {
                name: rec.name.clone(),
                detail: format!("blob too short for bytes {start}..{}", start + nbytes),
            })?;
            let sum = hex64(fnv1a(bytes));
            if sum != rec.checksum {
                return Err(Error::Corrupt {
                    name: rec.name.clone(),
                    detail: format!("checksum {sum} != manifest {}", rec.checksum),
                });
            }
            tensors.insert(rec.name.clone(), Tensor::from_le_bytes(rec.shape.clone(), bytes)?);
        }
        let whole = hex64(fnv1a(blob));
        if whole != manifest.checksum {
            return Err(Error::Corrupt {
                name: "<blob>".into(),
                detail: format!("blob checksum {whole} != manifest {}", manifest.checksum),
            });
        }
        if manifest.k != manifest.config.k_domain_layers {
            return Err(Error::Config(format!(
                "manifest k {} disagrees with config k {}",
                manifest.k, manifest.config.k_domain_layers
            )));
        }
        let weights = EncoderWeights::from_tensors(manifest.config, tensors)?;
        let rebuilt = Checkpoint::new(weights, manifest.stage, manifest.domain.as_deref(), manifest.parents.clone());
        if rebuilt.manifest.tensors != manifest.tensors {
            return Err(Error::Config("manifest records are not in canonical order".into()));
        }
        Ok(rebuilt)
    }
}

fn write(path: &PathBuf, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
