use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Graded relevance judgments keyed by query id, then doc id.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Qrels {
    judgments: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert one judgment; a repeated `(query, doc)` pair is an error.
    pub fn insert(&mut self, query: &str, doc: &str, grade: u32) -> Result<()> {
        let q = self.judgments.entry(query.to_string()).or_default();
        if q.insert(doc.to_string(), grade).is_some() {
            return Err(Error::DuplicateIds(vec![format!("{query}/{doc}")]));
        }
        Ok(())
    }

    pub fn grade(&self, query: &str, doc: &str) -> u32 {
        self.judgments
            .get(query)
            .and_then(|q| q.get(doc))
            .copied()
            .unwrap_or(0)
    }

    pub fn for_query(&self, query: &str) -> Option<&BTreeMap<String, u32>> {
        self.judgments.get(query)
    }

    pub fn queries(&self) -> impl Iterator<Item = &String> {
        self.judgments.keys()
    }

    /// Whether `query` has at least one document with grade >= 1.
    pub fn has_relevant(&self, query: &str) -> bool {
        self.for_query(query).is_some_and(|q| q.values().any(|&g| g > 0))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, u32)> {
        self.judgments
            .iter()
            .flat_map(|(q, docs)| docs.iter().map(move |(d, &g)| (q.as_str(), d.as_str(), g)))
    }

    pub fn len(&self) -> usize {
        self.judgments.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
