use serde::{Deserialize, Serialize};

/// Term-id to weight map with strictly positive weights, sorted by term id.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    entries: Vec<(u32, f32)>,
}

impl SparseVector {
    /// Build from arbitrary `(term, weight)` pairs; non-positive weights are
    /// dropped, duplicate terms keep the largest weight.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (u32, f32)>) -> Self {
        let mut entries: Vec<(u32, f32)> = pairs.into_iter().filter(|&(_, w)| w > 0.0).collect();
        entries.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.total_cmp(&a.1)));
        entries.dedup_by_key(|e| e.0);
        Self { entries }
    }

    pub fn from_dense(weights: impl IntoIterator<Item = f32>) -> Self {
        Self {
            entries: weights
                .into_iter()
                .enumerate()
                .filter(|&(_, w)| w > 0.0)
                .map(|(j, w)| (j as u32, w))
                .collect(),
        }
    }

    pub fn entries(&self) -> &[(u32, f32)] {
        &self.entries
    }

    pub fn get(&self, term: u32) -> Option<f32> {
        self.entries
            .binary_search_by_key(&term, |e| e.0)
            .ok()
            .map(|i| self.entries[i].1)
    }

    /// Number of stored (non-zero) entries.
    pub fn l0(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_dense(&self, dim: usize) -> Vec<f32> {
        let mut out = vec![0.0; dim];
        for &(j, w) in &self.entries {
            out[j as usize] = w;
        }
        out
    }
}

/// Inner product over shared terms, accumulated in ascending term order.
pub fn score(q: &SparseVector, d: &SparseVector) -> f64 {
    let (a, b) = (q.entries(), d.entries());
    let (mut i, mut j) = (0, 0);
    let mut s = 0.0f64;
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                s += f64::from(a[i].1) * f64::from(b[j].1);
                i += 1;
                j += 1;
            }
        }
    }
    s
}
