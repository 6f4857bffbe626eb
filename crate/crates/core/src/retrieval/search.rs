use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::encoder::{words, SparseVector};
use crate::error::Result;
use crate::retrieval::index::{IndexKind, InvertedIndex};

pub const BM25_K1: f64 = 0.9;
pub const BM25_B: f64 = 0.4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub doc_id: String,
    pub score: f64,
}

/// Ranking for one query: descending score, ties by ascending doc id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query_id: String,
    pub hits: Vec<Hit>,
}

impl RankedList {
    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.hits.iter().map(|h| h.doc_id.as_str())
    }
}

/// Exact top-`cutoff` selection over an accumulator indexed by internal doc
/// number. Documents that were never touched are not candidates.
fn top_k(index: &InvertedIndex, query_id: &str, acc: &[f64], touched: &[bool], cutoff: usize) -> RankedList {
    let mut cand: Vec<(u32, f64)> = acc
        .iter()
        .zip(touched)
        .enumerate()
        .filter(|(_, (_, &t))| t)
        .map(|(d, (&s, _))| (d as u32, s))
        .collect();
    let order = |a: &(u32, f64), b: &(u32, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
    if cand.len() > cutoff && cutoff > 0 {
        cand.select_nth_unstable_by(cutoff - 1, order);
    }
    cand.truncate(cutoff);
    cand.sort_unstable_by(order);
    RankedList {
        query_id: query_id.to_string(),
        hits: cand
            .into_iter()
            .map(|(d, score)| Hit {
                doc_id: index.doc_id(d).to_string(),
                score,
            })
            .collect(),
    }
}

/// Dot-product retrieval, term-at-a-time in ascending term order.
///
/// Each document's score is accumulated in the same order as
/// [`crate::encoder::score`], so the two agree bit for bit.
pub fn retrieve_sparse(index: &InvertedIndex, query_id: &str, q: &SparseVector, cutoff: usize) -> Result<RankedList> {
    index.require(IndexKind::Impact)?;
    let mut acc = vec![0.0f64; index.n_docs()];
    let mut touched = vec![false; index.n_docs()];
    for &(term, qw) in q.entries() {
        for p in index.postings(term) {
            acc[p.doc as usize] += f64::from(qw) * f64::from(p.weight);
            touched[p.doc as usize] = true;
        }
    }
    Ok(top_k(index, query_id, &acc, &touched, cutoff))
}

/// Lucene's non-negative idf.
pub fn bm25_idf(n_docs: usize, df: usize) -> f64 {
    let (n, df) = (n_docs as f64, df as f64);
    ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
}

fn bm25_term(idf: f64, tf: f64, doc_len: f64, avgdl: f64) -> f64 {
    idf * tf * (BM25_K1 + 1.0) / (tf + BM25_K1 * (1.0 - BM25_B + BM25_B * doc_len / avgdl))
}

/// Query words mapped to lexicon ids with multiplicity, ascending by id.
/// Words outside the lexicon cannot match and are dropped.
fn query_terms(index: &InvertedIndex, query: &str) -> Vec<(u32, u32)> {
    let mut ids: Vec<u32> = words(query).filter_map(|w| index.term_id(&w)).collect();
    ids.sort_unstable();
    let mut out: Vec<(u32, u32)> = Vec::new();
    for id in ids {
        match out.last_mut() {
            Some((t, c)) if *t == id => *c += 1,
            _ => out.push((id, 1)),
        }
    }
    out
}

/// BM25 score of one document; repeated query words count with multiplicity.
pub fn bm25_score(index: &InvertedIndex, query: &str, doc_id: &str) -> Result<f64> {
    index.require(IndexKind::Frequency)?;
    let Some(doc) = index.doc_index(doc_id) else {
        return Ok(0.0);
    };
    let len = f64::from(index.doc_len(doc));
    let mut s = 0.0;
    for (term, mult) in query_terms(index, query) {
        let list = index.postings(term);
        if let Ok(i) = list.binary_search_by(|p| p.doc.cmp(&doc)) {
            let idf = bm25_idf(index.n_docs(), list.len());
            s += f64::from(mult) * bm25_term(idf, f64::from(list[i].weight), len, index.avgdl());
        }
    }
    Ok(s)
}

pub fn retrieve_bm25(index: &InvertedIndex, query_id: &str, query: &str, cutoff: usize) -> Result<RankedList> {
    index.require(IndexKind::Frequency)?;
    let mut acc = vec![0.0f64; index.n_docs()];
    let mut touched = vec![false; index.n_docs()];
    for (term, mult) in query_terms(index, query) {
        let list = index.postings(term);
        let idf = bm25_idf(index.n_docs(), list.len());
        for p in list {
            let len = f64::from(index.doc_len(p.doc));
            acc[p.doc as usize] += f64::from(mult) * bm25_term(idf, f64::from(p.weight), len, index.avgdl());
            touched[p.doc as usize] = true;
        }
    }
    Ok(top_k(index, query_id, &acc, &touched, cutoff))
}

/// Total order used by every ranking: descending score, then ascending id.
pub fn hit_order(a: &Hit, b: &Hit) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.doc_id.cmp(&b.doc_id))
}
