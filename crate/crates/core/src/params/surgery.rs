use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::encoder::EncoderWeights;
use crate::error::{Error, Result};
use crate::params::checkpoint::{Checkpoint, Stage};
use crate::params::partition::partition_parameters;

/// Build the inference model from the domain subset of `domain` and the task
/// subset of `task`.
///
/// Requires `domain` to be a base or pre-trained checkpoint and `task` a
/// fine-tuned one. See [`splice`] for the same surgery without stage rules.
pub fn compose(domain: &Checkpoint, task: &Checkpoint) -> Result<Checkpoint> {
    if !matches!(
        domain.stage(),
        Stage::Base | Stage::PretrainSource | Stage::PretrainTarget
    ) {
        return Err(Error::Stage(format!(
            "domain parent must be base or pre-trained, got {}",
            domain.stage()
        )));
    }
    if task.stage() != Stage::FinetuneSource {
        return Err(Error::Stage(format!(
            "task parent must be {}, got {}",
            Stage::FinetuneSource,
            task.stage()
        )));
    }
    splice(domain, task)
}

/// Tensor-level surgery: domain-subset tensors from `domain`, task-subset
/// tensors from `task`, both copied byte-exactly.
pub fn splice(domain: &Checkpoint, task: &Checkpoint) -> Result<Checkpoint> {
    if domain.config() != task.config() {
        return Err(Error::Incompatible(format!(
            "model configs differ: {:?} vs {:?}",
            domain.config(),
            task.config()
        )));
    }
    if domain.manifest.k != task.manifest.k {
        return Err(Error::Incompatible(format!(
            "k differs: {} vs {}",
            domain.manifest.k, task.manifest.k
        )));
    }
    let partition = partition_parameters(domain.config())?;
    let mut tensors = BTreeMap::new();
    for name in domain.config().parameter_names() {
        let from = if partition.domain.contains(&name) { domain } else { task };
        let t = from
            .weights
            .get(&name)
            .ok_or_else(|| Error::MissingTensor(name.clone()))?;
        let other = if std::ptr::eq(from, domain) { task } else { domain };
        if other.weights.get(&name).map(|o| o.shape()) != Some(t.shape()) {
            return Err(Error::Incompatible(format!("shape mismatch for `{name}`")));
        }
        tensors.insert(name, t.clone());
    }
    let weights = EncoderWeights::from_tensors(*domain.config(), tensors)?;
    Ok(Checkpoint::new(
        weights,
        Stage::Composed,
        domain.manifest.domain.as_deref(),
        vec![domain.link("domain"), task.link("task")],
    ))
}

/// Names of tensors whose bytes differ between two checkpoints of the same config.
pub fn diff(a: &Checkpoint, b: &Checkpoint) -> Result<BTreeSet<String>> {
    if a.config() != b.config() {
        return Err(Error::Incompatible("cannot diff checkpoints with different configs".into()));
    }
    Ok(a.weights
        .tensors()
        .iter()
        .filter(|(name, t)| b.weights.get(name).is_none_or(|u| !bytes_equal(t.data(), u.data())))
        .map(|(name, _)| name.clone())
        .collect())
}

fn bytes_equal(a: &[f32], b: &[f32]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FreezeReport {
    /// Per tensor: `true` when bytes are identical.
    pub identical: BTreeMap<String, bool>,
    /// Expected-frozen tensors that changed.
    pub violations: Vec<String>,
    /// Names in `expected_frozen` that the checkpoints do not contain.
    pub unknown: Vec<String>,
    pub trainable_changed: usize,
    pub pass: bool,
}

impl FreezeReport {
    pub fn summary(&self) -> String {
        if self.pass {
            format!("PASS: frozen tensors intact, {} trainable tensors changed", self.trainable_changed)
        } else if !self.violations.is_empty() {
            format!("FAIL: frozen tensors changed: {}", self.violations.join(", "))
        } else if !self.unknown.is_empty() {
            format!("FAIL: unknown frozen names: {}", self.unknown.join(", "))
        } else {
            "FAIL: nothing trained".to_string()
        }
    }
}

/// PASS iff every expected-frozen tensor is byte-identical and at least one
/// other tensor changed.
pub fn freeze_verify(before: &Checkpoint, after: &Checkpoint, expected_frozen: &BTreeSet<String>) -> FreezeReport {
    let changed = diff(before, after).unwrap_or_else(|_| before.weights.names().cloned().collect());
    let identical: BTreeMap<String, bool> = before
        .weights
        .names()
        .map(|n| (n.clone(), !changed.contains(n)))
        .collect();
    let violations: Vec<String> = expected_frozen.iter().filter(|n| changed.contains(*n)).cloned().collect();
    let unknown: Vec<String> = expected_frozen
        .iter()
        .filter(|n| !identical.contains_key(*n))
        .cloned()
        .collect();
    let trainable_changed = changed.iter().filter(|n| !expected_frozen.contains(*n)).count();
    FreezeReport {
        pass: violations.is_empty() && unknown.is_empty() && trainable_changed > 0,
        identical,
        violations,
        unknown,
        trainable_changed,
    }
}
