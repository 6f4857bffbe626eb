use std::collections::BTreeSet;

use crate::encoder::{layer_of, ModelConfig};
use crate::error::{Error, Result};

/// Which subset a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Domain,
    Task,
}

/// Total, disjoint split of the encoder's parameters: embeddings, the MLM
/// bias and layers `0..k` form the domain subset; layers `k..L` the task subset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParameterPartition {
    pub k: usize,
    pub domain: BTreeSet<String>,
    pub task: BTreeSet<String>,
}

/// Partition at `config.k_domain_layers`.
pub fn partition_parameters(config: &ModelConfig) -> Result<ParameterPartition> {
    ParameterPartition::for_k(config, config.k_domain_layers as i64)
}

impl ParameterPartition {
    pub fn for_k(config: &ModelConfig, k: i64) -> Result<Self> {
        if k < 0 {
            return Err(Error::Config(format!("k must be non-negative, got {k}")));
        }
        let k = k as usize;
        if k >= config.layers {
            return Err(Error::NoTaskLayers {
                k,
                layers: config.layers,
            });
        }
        let (domain, task) = config
            .parameter_names()
            .into_iter()
            .partition(|name| role_of(name, k) == Role::Domain);
        Ok(Self { k, domain, task })
    }

    pub fn role(&self, name: &str) -> Option<Role> {
        if self.domain.contains(name) {
            Some(Role::Domain)
        } else if self.task.contains(name) {
            Some(Role::Task)
        } else {
            None
        }
    }

    /// Names frozen during MLM pre-training.
    pub fn frozen_for_pretraining(&self) -> &BTreeSet<String> {
        &self.task
    }

    /// Names frozen during relevance fine-tuning.
    pub fn frozen_for_finetuning(&self) -> &BTreeSet<String> {
        &self.domain
    }
}

fn role_of(name: &str, k: usize) -> Role {
    match layer_of(name) {
        Some(layer) if layer >= k => Role::Task,
        _ => Role::Domain,
    }
}
