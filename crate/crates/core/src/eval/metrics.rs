use crate::eval::qrels::Qrels;
use crate::retrieval::RankedList;

/// nDCG@k with gain `2^rel - 1` and discount `log2(rank + 1)`; the ideal
/// ranking is every judged document sorted by grade.
pub fn ndcg_at_k(ranked: &RankedList, qrels: &Qrels, k: usize) -> f64 {
    let dcg: f64 = ranked
        .hits
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, h)| gain(qrels.grade(&ranked.query_id, &h.doc_id)) / discount(i))
        .sum();
    let mut ideal: Vec<u32> = qrels
        .for_query(&ranked.query_id)
        .map(|q| q.values().copied().filter(|&g| g > 0).collect())
        .unwrap_or_default();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| gain(g) / discount(i))
        .sum();
    if idcg == 0.0 {
        0.0
    } else {
        dcg / idcg
    }
}

/// Reciprocal rank of the first document with grade >= 1 within the top `k`.
pub fn mrr_at_k(ranked: &RankedList, qrels: &Qrels, k: usize) -> f64 {
    ranked
        .hits
        .iter()
        .take(k)
        .position(|h| qrels.grade(&ranked.query_id, &h.doc_id) > 0)
        .map_or(0.0, |i| 1.0 / (i + 1) as f64)
}

fn gain(grade: u32) -> f64 {
    2f64.powi(grade as i32) - 1.0
}

fn discount(index: usize) -> f64 {
    (index as f64 + 2.0).log2()
}
