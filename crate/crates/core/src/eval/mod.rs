//! Ranking metrics, significance testing, sparsity statistics, TREC file
//! interchange and report tables.

mod metrics;
mod qrels;
mod report;
mod sparsity;
mod trec;
mod ttest;

pub use metrics::{mrr_at_k, ndcg_at_k};
pub use qrels::Qrels;
pub use report::{
    evaluate_runs, render_sweep, render_table, EvalReport, QueryScore, Significance, SweepReport, SweepRow, SystemEval,
    BM25_ROW, SIGNIFICANCE_LEVEL, ZERO_SHOT_ROW,
};
pub use sparsity::{index_sparsity, sparsity_from_l0, sparsity_stats, SparsityStats};
pub use trec::{format_qrels, format_run, parse_qrels, parse_run, read_qrels, read_run, write_qrels, write_run};
pub use ttest::{paired_ttest, TTest};
