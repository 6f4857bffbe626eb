use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::encoder::{score, SparseVector};
use crate::error::Error;

fn impact_index(docs: &[(&str, &[(u32, f32)])], dim: usize) -> InvertedIndex {
    InvertedIndex::from_impacts(
        docs.iter()
            .map(|(id, v)| (id.to_string(), SparseVector::from_pairs(v.iter().copied()), 1))
            .collect(),
        dim,
    )
    .unwrap()
}

/// Exhaustive scan: score every document, drop non-matching ones, sort.
fn brute_force(scores: Vec<(String, f64, bool)>, cutoff: usize) -> Vec<Hit> {
    let mut hits: Vec<Hit> = scores
        .into_iter()
        .filter(|(_, _, m)| *m)
        .map(|(doc_id, score, _)| Hit { doc_id, score })
        .collect();
    hits.sort_by(hit_order);
    hits.truncate(cutoff);
    hits
}

/// BM25 written out per document from raw token counts.
fn bm25_oracle(docs: &[(String, Vec<String>)], query: &[String]) -> Vec<(String, f64, bool)> {
    let n = docs.len() as f64;
    let avgdl = docs.iter().map(|(_, t)| t.len() as f64).sum::<f64>() / n;
    docs.iter()
        .map(|(id, toks)| {
            let mut s = 0.0;
            let mut matched = false;
            for q in query {
                let tf = toks.iter().filter(|t| *t == q).count() as f64;
                if tf == 0.0 {
                    continue;
                }
                matched = true;
                let df = docs.iter().filter(|(_, t)| t.contains(q)).count() as f64;
                let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
                let norm = 0.9 * (1.0 - 0.4 + 0.4 * toks.len() as f64 / avgdl);
                s += idf * tf * 1.9 / (tf + norm);
            }
            (id.clone(), s, matched)
        })
        .collect()
}

fn assert_same(got: &RankedList, want: &[Hit]) {
    assert_eq!(got.hits.len(), want.len(), "{got:?} vs {want:?}");
    for (g, w) in got.hits.iter().zip(want) {
        assert_eq!(g.doc_id, w.doc_id);
        assert!((g.score - w.score).abs() <= 1e-9, "{} vs {}", g.score, w.score);
    }
}

#[test]
fn single_posting_and_empty_doc() {
    let idx = impact_index(&[("a", &[(0, 1.0)]), ("b", &[])], 3);
    assert_eq!(idx.postings(0).len(), 1);
    assert_eq!(idx.n_docs(), 2);
    assert_eq!(idx.doc_l0(), vec![1, 0]);
    assert!((1..3).all(|t| idx.postings(t).is_empty()));
}

#[test]
fn disjoint_query_and_single_match() {
    let idx = impact_index(&[("a", &[(0, 1.5), (2, 0.5)]), ("b", &[(1, 2.0)])], 4);
    let q = SparseVector::from_pairs([(3, 1.0)]);
    assert!(retrieve_sparse(&idx, "q", &q, 10).unwrap().hits.is_empty());
    let q = SparseVector::from_pairs([(0, 2.0), (2, 4.0)]);
    let r = retrieve_sparse(&idx, "q", &q, 10).unwrap();
    assert_eq!(r.hits, vec![Hit { doc_id: "a".into(), score: 5.0 }]);
    assert!(retrieve_sparse(&idx, "q", &SparseVector::default(), 10).unwrap().hits.is_empty());
}

#[test]
fn ties_break_by_ascending_doc_id() {
    let idx = impact_index(&[("c", &[(0, 1.0)]), ("a", &[(0, 1.0)]), ("b", &[(0, 1.0)])], 1);
    let r = retrieve_sparse(&idx, "q", &SparseVector::from_pairs([(0, 1.0)]), 2).unwrap();
    assert_eq!(r.doc_ids().collect::<Vec<_>>(), vec!["a", "b"]);
}

#[test]
fn duplicate_doc_ids_rejected() {
    let err = InvertedIndex::from_texts(vec![("a".into(), "x".into()), ("a".into(), "y".into())]).unwrap_err();
    assert!(matches!(err, Error::DuplicateIds(_)));
}

#[test]
fn bm25_examples() {
    let idx = InvertedIndex::from_texts(vec![("d1".into(), "apple".into()), ("d2".into(), "pear".into())]).unwrap();
    let s = bm25_score(&idx, "apple", "d1").unwrap();
    assert!((s - 2f64.ln()).abs() < 1e-12, "{s}");
    assert_eq!(bm25_score(&idx, "apple", "d2").unwrap(), 0.0);
    assert_eq!(bm25_score(&idx, "", "d1").unwrap(), 0.0);
    // Multiplicity counts.
    let twice = bm25_score(&idx, "apple apple", "d1").unwrap();
    assert!((twice - 2.0 * s).abs() < 1e-12);
    assert!(retrieve_bm25(&idx, "q", "", 10).unwrap().hits.is_empty());
}

#[test]
fn kind_mismatch_is_an_error() {
    let idx = InvertedIndex::from_texts(vec![("d1".into(), "apple".into())]).unwrap();
    assert!(matches!(
        retrieve_sparse(&idx, "q", &SparseVector::default(), 10),
        Err(Error::IndexKind { .. })
    ));
}

fn random_impacts(rng: &mut ChaCha8Rng, n_docs: usize, dim: u32) -> Vec<(String, SparseVector, u32)> {
    (0..n_docs)
        .map(|i| {
            let nnz = rng.random_range(0..8);
            // Coarse weights make exact ties common.
            let v = SparseVector::from_pairs(
                (0..nnz).map(|_| (rng.random_range(0..dim), rng.random_range(1..5) as f32 * 0.25)),
            );
            (format!("doc{:04}", rng.random_range(0..100_000) * 1000 + i), v, nnz)
        })
        .collect()
}

#[test]
fn impact_retrieval_matches_exhaustive_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..30 {
        let n = rng.random_range(1..150);
        let docs = random_impacts(&mut rng, n, 30);
        let idx = InvertedIndex::from_impacts(docs.clone(), 30).unwrap();
        for _ in 0..5 {
            let q = SparseVector::from_pairs((0..4).map(|_| (rng.random_range(0..30), rng.random_range(1..9) as f32 * 0.5)));
            let cutoff = rng.random_range(1..40);
            let oracle = brute_force(
                docs.iter()
                    .map(|(id, d, _)| (id.clone(), score(&q, d), q.entries().iter().any(|(t, _)| d.get(*t).is_some())))
                    .collect(),
                cutoff,
            );
            let got = retrieve_sparse(&idx, "q", &q, cutoff).unwrap();
            assert_same(&got, &oracle);
            // Same accumulation order: bit-identical scores.
            assert!(got.hits.iter().zip(&oracle).all(|(a, b)| a.score.to_bits() == b.score.to_bits()));
        }
    }
}

#[test]
fn bm25_retrieval_matches_exhaustive_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let lex = ["alpha", "beta", "gamma", "delta", "eps", "zeta", "eta", "theta"];
    for _ in 0..30 {
        let n = rng.random_range(1..120);
        let docs: Vec<(String, Vec<String>)> = (0..n)
            .map(|i| {
                let len = rng.random_range(1..12);
                (format!("d{i}"), (0..len).map(|_| lex[rng.random_range(0..lex.len())].to_string()).collect())
            })
            .collect();
        let idx = InvertedIndex::from_texts(docs.iter().map(|(id, t)| (id.clone(), t.join(" "))).collect()).unwrap();
        let query: Vec<String> = (0..rng.random_range(1..4)).map(|_| lex[rng.random_range(0..lex.len())].to_string()).collect();
        let oracle = brute_force(bm25_oracle(&docs, &query), 25);
        assert_same(&retrieve_bm25(&idx, "q", &query.join(" "), 25).unwrap(), &oracle);
        for (id, s, _) in bm25_oracle(&docs, &query) {
            assert!((bm25_score(&idx, &query.join(" "), &id).unwrap() - s).abs() < 1e-9);
        }
    }
}

#[test]
fn index_round_trip_and_checksum() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let docs = random_impacts(&mut rng, 40, 25);
    let idx = InvertedIndex::from_impacts(docs.clone(), 25).unwrap();
    assert_eq!(idx.checksum(), InvertedIndex::from_impacts(docs, 25).unwrap().checksum());
    idx.save(dir.path()).unwrap();
    assert_eq!(InvertedIndex::load(dir.path()).unwrap(), idx);
    let text = InvertedIndex::from_texts(vec![("x".into(), "a b b".into()), ("y".into(), "c".into())]).unwrap();
    text.save(&dir.path().join("bm25")).unwrap();
    assert_eq!(InvertedIndex::load(&dir.path().join("bm25")).unwrap(), text);
    let p = dir.path().join("postings.bin");
    let mut bytes = std::fs::read(&p).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    std::fs::write(&p, bytes).unwrap();
    assert!(matches!(InvertedIndex::load(dir.path()), Err(Error::Corrupt { .. })));
}

proptest! {
    #[test]
    fn bm25_monotone_in_tf(extra in 0usize..6, base in 1usize..4, other_len in 0usize..6) {
        let doc = |tf: usize| {
            let mut w = vec!["t"; tf];
            w.extend(std::iter::repeat_n("x", other_len));
            w.join(" ")
        };
        let build = |tf: usize| InvertedIndex::from_texts(vec![
            ("a".into(), doc(tf)),
            ("b".into(), "t y z".into()),
            ("c".into(), "y".into()),
        ]).unwrap();
        let lo = bm25_score(&build(base), "t", "a").unwrap();
        let hi = bm25_score(&build(base + extra), "t", "a").unwrap();
        prop_assert!(hi >= lo - 1e-12, "{} < {}", hi, lo);
    }
}
