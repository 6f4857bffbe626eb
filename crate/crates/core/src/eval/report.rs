use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::metrics::{mrr_at_k, ndcg_at_k};
use crate::eval::qrels::Qrels;
use crate::eval::sparsity::SparsityStats;
use crate::eval::ttest::paired_ttest;
use crate::retrieval::RankedList;

pub const BM25_ROW: &str = "bm25";
pub const ZERO_SHOT_ROW: &str = "zero-shot";
pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryScore {
    pub query_id: String,
    pub ndcg: f64,
    pub mrr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Significance {
    pub baseline: String,
    pub t: f64,
    pub p_two_sided: f64,
    /// Better than the baseline with `p <= 0.05`.
    pub significant: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemEval {
    pub name: String,
    pub per_query: Vec<QueryScore>,
    pub ndcg: f64,
    pub mrr: f64,
    pub sparsity: Option<SparsityStats>,
    pub significance: Vec<Significance>,
}

/// Score one system's runs. Only queries with at least one relevant document
/// are evaluated; a judged query absent from `runs` scores zero.
pub fn evaluate_runs(name: &str, runs: &[RankedList], qrels: &Qrels, k: usize) -> SystemEval {
    let by_query: BTreeMap<&str, &RankedList> = runs.iter().map(|r| (r.query_id.as_str(), r)).collect();
    let mut per_query = Vec::new();
    for q in qrels.queries().filter(|q| qrels.has_relevant(q)) {
        let empty = RankedList {
            query_id: q.clone(),
            hits: Vec::new(),
        };
        let run = by_query.get(q.as_str()).copied().unwrap_or(&empty);
        per_query.push(QueryScore {
            query_id: q.clone(),
            ndcg: ndcg_at_k(run, qrels, k),
            mrr: mrr_at_k(run, qrels, k),
        });
    }
    let n = per_query.len().max(1) as f64;
    SystemEval {
        name: name.to_string(),
        ndcg: per_query.iter().map(|s| s.ndcg).sum::<f64>() / n,
        mrr: per_query.iter().map(|s| s.mrr).sum::<f64>() / n,
        per_query,
        sparsity: None,
        significance: Vec::new(),
    }
}

/// All systems evaluated on one dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub cutoff: usize,
    pub systems: Vec<SystemEval>,
}

impl EvalReport {
    pub fn new(dataset: &str, cutoff: usize) -> Self {
        Self {
            dataset: dataset.to_string(),
            cutoff,
            systems: Vec::new(),
        }
    }

    pub fn push(&mut self, system: SystemEval) {
        self.systems.push(system);
    }

    pub fn system(&self, name: &str) -> Option<&SystemEval> {
        self.systems.iter().find(|s| s.name == name)
    }

    /// Paired t-tests on per-query nDCG of every other system against each
    /// baseline present in the report.
    pub fn compute_significance(&mut self, baselines: &[&str]) -> Result<()> {
        let base: Vec<SystemEval> = baselines.iter().filter_map(|b| self.system(b).cloned()).collect();
        for sys in &mut self.systems {
            sys.significance.clear();
            for b in base.iter().filter(|b| b.name != sys.name) {
                let ids = |s: &SystemEval| s.per_query.iter().map(|q| q.query_id.clone()).collect::<Vec<_>>();
                if ids(sys) != ids(b) {
                    return Err(Error::Dimension(format!(
                        "systems `{}` and `{}` were evaluated on different queries",
                        sys.name, b.name
                    )));
                }
                let a: Vec<f64> = sys.per_query.iter().map(|q| q.ndcg).collect();
                let c: Vec<f64> = b.per_query.iter().map(|q| q.ndcg).collect();
                let t = paired_ttest(&a, &c)?;
                sys.significance.push(Significance {
                    baseline: b.name.clone(),
                    t: t.t,
                    p_two_sided: t.p_two_sided,
                    significant: t.mean_diff > 0.0 && t.p_two_sided <= SIGNIFICANCE_LEVEL,
                });
            }
        }
        Ok(())
    }

    fn beats(&self, sys: &SystemEval, baseline: &str) -> bool {
        sys.significance.iter().any(|s| s.baseline == baseline && s.significant)
    }
}

/// Plain-text table with one row per dataset and one column per system,
/// nDCG@k scaled by 100. `†` marks a significant gain over BM25, `‡` over
/// zero-shot, and `*` a mean strictly above zero-shot.
pub fn render_table(reports: &[EvalReport]) -> String {
    let Some(first) = reports.first() else {
        return String::new();
    };
    let cols: Vec<&str> = first.systems.iter().map(|s| s.name.as_str()).collect();
    let mut rows: Vec<Vec<String>> = vec![std::iter::once(format!("nDCG@{}", first.cutoff))
        .chain(cols.iter().map(|c| c.to_string()))
        .collect()];
    for r in reports {
        let zero = r.system(ZERO_SHOT_ROW).map(|s| s.ndcg);
        let mut row = vec![r.dataset.clone()];
        for c in &cols {
            let cell = match r.system(c) {
                None => "-".to_string(),
                Some(s) => {
                    let mut cell = format!("{:.1}", 100.0 * s.ndcg);
                    if zero.is_some_and(|z| s.ndcg > z) && s.name != ZERO_SHOT_ROW {
                        cell.push('*');
                    }
                    if r.beats(s, BM25_ROW) {
                        cell.push('†');
                    }
                    if r.beats(s, ZERO_SHOT_ROW) {
                        cell.push('‡');
                    }
                    cell
                }
            };
            row.push(cell);
        }
        rows.push(row);
    }
    align(&rows)
}

fn align(rows: &[Vec<String>]) -> String {
    let n = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..n)
        .map(|i| rows.iter().filter_map(|r| r.get(i)).map(|c| c.chars().count()).max().unwrap_or(0))
        .collect();
    let mut s = String::new();
    for (ri, r) in rows.iter().enumerate() {
        let line: Vec<String> = r.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
        let _ = writeln!(s, "| {} |", line.join(" | "));
        if ri == 0 {
            let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
            let _ = writeln!(s, "|-{}-|", rule.join("-|-"));
        }
    }
    s
}

/// Performance and sparsity as a function of `k`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub label: String,
    pub ndcg: f64,
    pub mean_doc_l0: f64,
}

/// A k-sweep: one row per `k` plus the zero-shot reference it is compared to.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub zero_shot: SweepRow,
    pub rows: Vec<SweepRow>,
}

/// Columns are zero-shot followed by the sweep entries; the two rows are
/// nDCG@10 (x100, best marked `*`) and mean document L0.
pub fn render_sweep(sweep: &SweepReport) -> String {
    let cols: Vec<&SweepRow> = std::iter::once(&sweep.zero_shot).chain(&sweep.rows).collect();
    let mut table = vec![std::iter::once("method".to_string())
        .chain(cols.iter().map(|r| r.label.clone()))
        .collect::<Vec<_>>()];
    let best = cols.iter().map(|r| r.ndcg).fold(f64::NEG_INFINITY, f64::max);
    table.push(
        std::iter::once("nDCG@10".to_string())
            .chain(cols.iter().map(|r| {
                let mark = if r.ndcg == best { "*" } else { "" };
                format!("{:.1}{mark}", 100.0 * r.ndcg)
            }))
            .collect(),
    );
    table.push(
        std::iter::once("mean doc L0".to_string())
            .chain(cols.iter().map(|r| format!("{:.1}", r.mean_doc_l0)))
            .collect(),
    );
    align(&table)
}
