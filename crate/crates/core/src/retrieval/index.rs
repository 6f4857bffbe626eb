use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::{words, SparseVector};
use crate::error::{Error, Result};
use crate::params::{fnv1a, hex64};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexKind {
    /// Learned term weights from a sparse encoder.
    Impact,
    /// Raw term frequencies over whitespace/punctuation tokens, for BM25.
    Frequency,
}

impl IndexKind {
    pub fn as_str(self) -> &'static str {
        match self {
            IndexKind::Impact => "impact",
            IndexKind::Frequency => "frequency",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Posting {
    pub doc: u32,
    pub weight: f32,
}

/// Immutable term-at-a-time index. Documents are numbered in ascending
/// order of their external id, so internal order doubles as the tie rule.
#[derive(Clone, Debug, PartialEq)]
pub struct InvertedIndex {
    kind: IndexKind,
    doc_ids: Vec<String>,
    doc_lens: Vec<u32>,
    postings: Vec<Vec<Posting>>,
    lexicon: Vec<String>,
    avgdl: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IndexMeta {
    kind: IndexKind,
    n_docs: usize,
    n_terms: usize,
    avgdl: f64,
    lexicon: Vec<String>,
    postings_checksum: String,
    docstore_checksum: String,
    checksum: String,
}

fn sorted_unique<T>(mut docs: Vec<(String, T)>) -> Result<Vec<(String, T)>> {
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    docs.sort_by(|a, b| a.0.cmp(&b.0));
    let mut dups: Vec<String> = docs
        .windows(2)
        .filter(|w| w[0].0 == w[1].0)
        .map(|w| w[0].0.clone())
        .collect();
    if !dups.is_empty() {
        dups.dedup();
        return Err(Error::DuplicateIds(dups));
    }
    Ok(docs)
}

impl InvertedIndex {
    /// Index learned representations. Each entry is `(doc id, vector, length in tokens)`;
    /// `n_terms` is the representation dimension.
    pub fn from_impacts(docs: Vec<(String, SparseVector, u32)>, n_terms: usize) -> Result<Self> {
        let docs = sorted_unique(docs.into_iter().map(|(id, v, len)| (id, (v, len))).collect())?;
        let mut postings = vec![Vec::new(); n_terms];
        let mut doc_ids = Vec::with_capacity(docs.len());
        let mut doc_lens = Vec::with_capacity(docs.len());
        for (d, (id, (vec, len))) in docs.into_iter().enumerate() {
            for &(term, weight) in vec.entries() {
                let list: &mut Vec<Posting> = postings.get_mut(term as usize).ok_or_else(|| {
                    Error::Dimension(format!("term {term} outside index dimension {n_terms}"))
                })?;
                list.push(Posting { doc: d as u32, weight });
            }
            doc_ids.push(id);
            doc_lens.push(len);
        }
        Ok(Self::assemble(IndexKind::Impact, doc_ids, doc_lens, postings, Vec::new()))
    }

    /// Index raw text for BM25. The lexicon is the sorted set of corpus words.
    pub fn from_texts(docs: Vec<(String, String)>) -> Result<Self> {
        let docs = sorted_unique(docs)?;
        let tokenized: Vec<Vec<String>> = docs.iter().map(|(_, t)| words(t).collect()).collect();
        let lexicon: Vec<String> = tokenized
            .iter()
            .flatten()
            .cloned()
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        let ids: BTreeMap<&str, usize> = lexicon.iter().enumerate().map(|(i, w)| (w.as_str(), i)).collect();
        let mut postings = vec![Vec::new(); lexicon.len()];
        let mut doc_lens = Vec::with_capacity(docs.len());
        for (d, toks) in tokenized.iter().enumerate() {
            let mut tf: BTreeMap<usize, u32> = BTreeMap::new();
            for t in toks {
                *tf.entry(ids[t.as_str()]).or_default() += 1;
            }
            for (term, count) in tf {
                postings[term].push(Posting {
                    doc: d as u32,
                    weight: count as f32,
                });
            }
            doc_lens.push(toks.len() as u32);
        }
        let doc_ids = docs.into_iter().map(|(id, _)| id).collect();
        Ok(Self::assemble(IndexKind::Frequency, doc_ids, doc_lens, postings, lexicon))
    }

    fn assemble(
        kind: IndexKind,
        doc_ids: Vec<String>,
        doc_lens: Vec<u32>,
        postings: Vec<Vec<Posting>>,
        lexicon: Vec<String>,
    ) -> Self {
        let avgdl = doc_lens.iter().map(|&l| f64::from(l)).sum::<f64>() / doc_lens.len() as f64;
        Self {
            kind,
            doc_ids,
            doc_lens,
            postings,
            lexicon,
            avgdl,
        }
    }

    pub fn kind(&self) -> IndexKind {
        self.kind
    }

    pub fn n_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn n_terms(&self) -> usize {
        self.postings.len()
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn doc_id(&self, doc: u32) -> &str {
        &self.doc_ids[doc as usize]
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn doc_len(&self, doc: u32) -> u32 {
        self.doc_lens[doc as usize]
    }

    pub fn doc_index(&self, id: &str) -> Option<u32> {
        self.doc_ids
            .binary_search_by(|d| d.as_str().cmp(id))
            .ok()
            .map(|i| i as u32)
    }

    pub fn postings(&self, term: u32) -> &[Posting] {
        self.postings.get(term as usize).map_or(&[], Vec::as_slice)
    }

    /// Lexicon id of a word (frequency indexes only).
    pub fn term_id(&self, word: &str) -> Option<u32> {
        self.lexicon
            .binary_search_by(|w| w.as_str().cmp(word))
            .ok()
            .map(|i| i as u32)
    }

    pub fn lexicon(&self) -> &[String] {
        &self.lexicon
    }

    pub fn document_frequency(&self, term: u32) -> usize {
        self.postings(term).len()
    }

    /// Non-zero term count of each document, in internal order.
    pub fn doc_l0(&self) -> Vec<usize> {
        let mut l0 = vec![0usize; self.n_docs()];
        for list in &self.postings {
            for p in list {
                l0[p.doc as usize] += 1;
            }
        }
        l0
    }

    pub(crate) fn require(&self, kind: IndexKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::IndexKind {
                expected: kind.as_str().into(),
                found: self.kind.as_str().into(),
            });
        }
        Ok(())
    }

    fn postings_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&(self.postings.len() as u32).to_le_bytes());
        for list in &self.postings {
            out.extend_from_slice(&(list.len() as u32).to_le_bytes());
            for p in list {
                out.extend_from_slice(&p.doc.to_le_bytes());
                out.extend_from_slice(&p.weight.to_le_bytes());
            }
        }
        out
    }

    fn docstore_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&(self.doc_ids.len() as u32).to_le_bytes());
        for (id, &len) in self.doc_ids.iter().zip(&self.doc_lens) {
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(&(id.len() as u32).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
        }
        out
    }

    /// Checksum over the serialized postings, doc store and lexicon.
    pub fn checksum(&self) -> u64 {
        let mut all = self.postings_bytes();
        all.extend(self.docstore_bytes());
        for w in &self.lexicon {
            all.extend_from_slice(w.as_bytes());
            all.push(b'\n');
        }
        all.push(self.kind as u8);
        fnv1a(&all)
    }

    /// Write `meta.json`, `postings.bin` and `docstore.bin` into `dir`.
    ///
    /// `postings.bin`: u32 term count, then per term a u32 list length and
    /// `(u32 doc, f32 weight)` pairs. `docstore.bin`: u32 doc count, then per
    /// doc a u32 token length, u32 id byte length and the UTF-8 id. All
    /// integers and floats little-endian.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let postings = self.postings_bytes();
        let docstore = self.docstore_bytes();
        let meta = IndexMeta {
            kind: self.kind,
            n_docs: self.n_docs(),
            n_terms: self.n_terms(),
            avgdl: self.avgdl,
            lexicon: self.lexicon.clone(),
            postings_checksum: hex64(fnv1a(&postings)),
            docstore_checksum: hex64(fnv1a(&docstore)),
            checksum: hex64(self.checksum()),
        };
        for (name, bytes) in [("postings.bin", postings), ("docstore.bin", docstore)] {
            let p = dir.join(name);
            fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
        }
        let p = dir.join("meta.json");
        fs::write(&p, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&p, e))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| {
            let p = dir.join(name);
            fs::read(&p).map_err(|e| Error::io(&p, e))
        };
        let meta: IndexMeta = serde_json::from_slice(&read("meta.json")?)?;
        let postings_raw = read("postings.bin")?;
        let docstore_raw = read("docstore.bin")?;
        let corrupt = |name: &str, detail: &str| Error::Corrupt {
            name: name.into(),
            detail: detail.into(),
        };
        if hex64(fnv1a(&postings_raw)) != meta.postings_checksum {
            return Err(corrupt("postings.bin", "checksum mismatch"));
        }
        if hex64(fnv1a(&docstore_raw)) != meta.docstore_checksum {
            return Err(corrupt("docstore.bin", "checksum mismatch"));
        }
        let mut r = Reader::new(&postings_raw, "postings.bin");
        let n_terms = r.u32()? as usize;
        let mut postings = Vec::with_capacity(n_terms);
        for _ in 0..n_terms {
            let n = r.u32()? as usize;
            let mut list = Vec::with_capacity(n);
            for _ in 0..n {
                let doc = r.u32()?;
                let weight = f32::from_bits(r.u32()?);
                list.push(Posting { doc, weight });
            }
            postings.push(list);
        }
        r.finish()?;
        let mut r = Reader::new(&docstore_raw, "docstore.bin");
        let n_docs = r.u32()? as usize;
        let mut doc_ids = Vec::with_capacity(n_docs);
        let mut doc_lens = Vec::with_capacity(n_docs);
        for _ in 0..n_docs {
            doc_lens.push(r.u32()?);
            let len = r.u32()? as usize;
            let id = String::from_utf8(r.bytes(len)?.to_vec())
                .map_err(|_| corrupt("docstore.bin", "doc id is not UTF-8"))?;
            doc_ids.push(id);
        }
        r.finish()?;
        if n_docs != meta.n_docs || n_terms != meta.n_terms {
            return Err(corrupt("meta.json", "counts disagree with data files"));
        }
        let index = Self::assemble(meta.kind, doc_ids, doc_lens, postings, meta.lexicon);
        if hex64(index.checksum()) != meta.checksum {
            return Err(corrupt("meta.json", "index checksum mismatch"));
        }
        index.validate()?;
        Ok(index)
    }

    fn validate(&self) -> Result<()> {
        let bad = |d: &str| Error::Corrupt {
            name: "index".into(),
            detail: d.into(),
        };
        let n = self.n_docs() as u32;
        for list in &self.postings {
            if list.windows(2).any(|w| w[0].doc >= w[1].doc) || list.iter().any(|p| p.doc >= n) {
                return Err(bad("posting list not strictly increasing or out of range"));
            }
        }
        let unique: HashSet<&String> = self.doc_ids.iter().collect();
        if unique.len() != self.doc_ids.len() || self.doc_ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(bad("doc ids not sorted and unique"));
        }
        Ok(())
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
    name: &'static str,
}

impl<'a> Reader<'a> {
    fn new(data: &'a [u8], name: &'static str) -> Self {
        Self { data, pos: 0, name }
    }

    fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.data.len()).ok_or_else(|| Error::Corrupt {
            name: self.name.into(),
            detail: "truncated".into(),
        })?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.bytes(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(Error::Corrupt {
                name: self.name.into(),
                detail: "trailing bytes".into(),
            });
        }
        Ok(())
    }
}
