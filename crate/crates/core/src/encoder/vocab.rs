use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const MASK: u32 = 2;
pub const CLS: u32 = 3;
pub const SEP: u32 = 4;
pub const SPECIALS: [&str; 5] = ["[PAD]", "[UNK]", "[MASK]", "[CLS]", "[SEP]"];
pub const NUM_SPECIALS: usize = SPECIALS.len();

pub fn is_special(id: u32) -> bool {
    (id as usize) < NUM_SPECIALS
}

/// Lowercase and split on anything that is not alphanumeric.
pub fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
}

/// Word-level vocabulary shared by every pipeline stage. Immutable once built.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    terms: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocabulary {
    /// Frequency-ranked terms (ties lexicographic), truncated to
    /// `max_size - 5`, after the fixed specials.
    pub fn build<I, S>(corpora: &[I], max_size: usize) -> Result<Self>
    where
        for<'a> &'a I: IntoIterator<Item = &'a S>,
        S: AsRef<str>,
    {
        let mut counts: BTreeMap<String, u64> = BTreeMap::new();
        for corpus in corpora {
            for text in corpus {
                for w in words(text.as_ref()) {
                    *counts.entry(w).or_default() += 1;
                }
            }
        }
        if counts.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        if max_size <= NUM_SPECIALS {
            return Err(Error::Config(format!(
                "vocabulary size {max_size} leaves no room after {NUM_SPECIALS} specials"
            )));
        }
        let mut ranked: Vec<(String, u64)> = counts
            .into_iter()
            .filter(|(w, _)| !SPECIALS.contains(&w.as_str()))
            .collect();
        // BTreeMap iteration is lexicographic, so a stable sort keeps that as the tie-break.
        ranked.sort_by(|a, b| b.1.cmp(&a.1));
        ranked.truncate(max_size - NUM_SPECIALS);
        Self::from_terms(ranked.into_iter().map(|(w, _)| w).collect())
    }

    /// Vocabulary from non-special terms in id order.
    pub fn from_terms(terms: Vec<String>) -> Result<Self> {
        let all: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).chain(terms).collect();
        let mut ids = HashMap::with_capacity(all.len());
        for (i, t) in all.iter().enumerate() {
            if ids.insert(t.clone(), i as u32).is_some() {
                return Err(Error::DuplicateIds(vec![t.clone()]));
            }
        }
        Ok(Self { terms: all, ids })
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn id(&self, term: &str) -> Option<u32> {
        self.ids.get(term).copied()
    }

    pub fn term(&self, id: u32) -> Option<&str> {
        self.terms.get(id as usize).map(String::as_str)
    }

    /// All terms including the specials, indexed by id.
    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    /// `[CLS] ids... [SEP]`, unknown words mapped to `[UNK]`, truncated to `max_seq_len`.
    pub fn tokenize(&self, text: &str, max_seq_len: usize) -> Vec<u32> {
        let mut out = vec![CLS];
        out.extend(words(text).map(|w| self.id(&w).unwrap_or(UNK)));
        out.push(SEP);
        if out.len() > max_seq_len {
            out.truncate(max_seq_len.max(1));
            if max_seq_len >= 2 {
                *out.last_mut().unwrap() = SEP;
            }
        }
        out
    }

    /// One term per line, line number = id, specials on the first five lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for t in &self.terms {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() < NUM_SPECIALS || lines[..NUM_SPECIALS] != SPECIALS {
            return Err(Error::Parse {
                path: "<vocabulary>".into(),
                line: 1,
                msg: "vocabulary must start with the five special tokens".into(),
            });
        }
        Self::from_terms(lines[NUM_SPECIALS..].iter().map(|s| s.to_string()).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}
