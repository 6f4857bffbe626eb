//! Inverted index over sparse representations or raw term frequencies, with
//! exact top-k dot-product and BM25 retrieval.

mod build;
mod index;
mod search;

pub use build::{build_index, encode_texts, IndexSource};
pub use index::{IndexKind, InvertedIndex, Posting};
pub use search::{
    bm25_idf, bm25_score, hit_order, retrieve_bm25, retrieve_sparse, Hit, RankedList, BM25_B, BM25_K1,
};

#[cfg(test)]
mod tests;
