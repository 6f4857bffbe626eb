use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};
use crate::numeric::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam with per-tensor moments.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    m: BTreeMap<String, Vec<T>>,
    v: BTreeMap<String, Vec<T>>,
    t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig, weights: &BTreeMap<String, Tensor<T>>) -> Self {
        let zeros = |w: &Tensor<T>| vec![T::zero(); w.numel()];
        Self {
            config,
            m: weights.iter().map(|(k, w)| (k.clone(), zeros(w))).collect(),
            v: weights.iter().map(|(k, w)| (k.clone(), zeros(w))).collect(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self, name: &str) -> Option<&[T]> {
        self.m.get(name).map(Vec::as_slice)
    }

    pub fn second_moment(&self, name: &str) -> Option<&[T]> {
        self.v.get(name).map(Vec::as_slice)
    }
}

/// One optimizer step over every tensor not named in `frozen`.
///
/// Frozen tensors and their moments are left untouched; gradients for them
/// may be absent.
pub fn adam_step<T: Scalar>(
    weights: &mut BTreeMap<String, Tensor<T>>,
    grads: &BTreeMap<String, Tensor<T>>,
    state: &mut AdamState<T>,
    frozen: &BTreeSet<String>,
) -> Result<()> {
    let unknown: Vec<String> = frozen
        .iter()
        .filter(|n| !weights.contains_key(*n))
        .cloned()
        .collect();
    if !unknown.is_empty() {
        return Err(Error::UnknownFrozen(unknown));
    }
    for (name, w) in weights.iter() {
        if frozen.contains(name) {
            continue;
        }
        let g = grads
            .get(name)
            .ok_or_else(|| Error::MissingGradient(name.clone()))?;
        let mv_ok = state.m.get(name).is_some_and(|m| m.len() == w.numel());
        if g.shape() != w.shape() || !mv_ok {
            return Err(Error::Dimension(format!(
                "adam: `{name}` weight {:?}, grad {:?} or moment size disagree",
                w.shape(),
                g.shape()
            )));
        }
    }

    state.t += 1;
    let cfg = state.config;
    let t = state.t as i32;
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let lr = T::lit(cfg.lr);
    let eps = T::lit(cfg.eps);
    let c1 = T::one() - T::lit(cfg.beta1.powi(t));
    let c2 = T::one() - T::lit(cfg.beta2.powi(t));

    for (name, w) in weights.iter_mut() {
        if frozen.contains(name) {
            continue;
        }
        let g = grads[name].data();
        let m = state.m.get_mut(name).expect("checked above");
        let v = state.v.get_mut(name).expect("checked above");
        for (i, x) in w.data_mut().iter_mut().enumerate() {
            let gi = g[i];
            m[i] = b1 * m[i] + (T::one() - b1) * gi;
            v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
            let mhat = m[i] / c1;
            let vhat = v[i] / c2;
            *x -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}
