use serde::{Deserialize, Serialize};

use crate::encoder::SparseVector;
use crate::error::{Error, Result};
use crate::retrieval::InvertedIndex;

/// L0 statistics of sparse representations (non-zero term counts).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsityStats {
    pub mean_l0_docs: f64,
    pub median_l0_docs: f64,
    pub mean_l0_queries: f64,
}

fn mean(xs: &[usize]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<usize>() as f64 / xs.len() as f64
    }
}

fn median(xs: &[usize]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_unstable();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2] as f64
    } else {
        (v[n / 2 - 1] + v[n / 2]) as f64 / 2.0
    }
}

pub fn sparsity_from_l0(docs: &[usize], queries: &[usize]) -> Result<SparsityStats> {
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(SparsityStats {
        mean_l0_docs: mean(docs),
        median_l0_docs: median(docs),
        mean_l0_queries: mean(queries),
    })
}

pub fn sparsity_stats(docs: &[SparseVector], queries: &[SparseVector]) -> Result<SparsityStats> {
    let d: Vec<usize> = docs.iter().map(SparseVector::l0).collect();
    let q: Vec<usize> = queries.iter().map(SparseVector::l0).collect();
    sparsity_from_l0(&d, &q)
}

pub fn index_sparsity(index: &InvertedIndex, queries: &[SparseVector]) -> Result<SparsityStats> {
    let q: Vec<usize> = queries.iter().map(SparseVector::l0).collect();
    sparsity_from_l0(&index.doc_l0(), &q)
}
