//! Datasets on disk and the synthetic cross-domain benchmark.

mod corpus;
mod synth;

pub use corpus::{
    ingest, read_queries, read_triples, write_queries, write_triples, Corpus, Dataset, DatasetStats, Document,
    Query, TrainTriple,
};
pub use synth::{synth_generate, AuditCounts, SynthOutput, SynthSpec, AUDIT_WINDOW, MIN_AUDIT_COUNT};
