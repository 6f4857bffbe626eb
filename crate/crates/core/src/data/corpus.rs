use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::words;
use crate::error::{Error, Result};
use crate::eval::{read_qrels, write_qrels, Qrels};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Query {
    pub id: String,
    pub text: String,
}

/// Query text with one relevant and one non-relevant document id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainTriple {
    pub query: String,
    pub pos: String,
    pub neg: String,
}

/// Documents in file order with unique ids.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Corpus {
    docs: Vec<Document>,
    by_id: HashMap<String, usize>,
}

fn find_duplicates<'a>(ids: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut dups = BTreeSet::new();
    for id in ids {
        if !seen.insert(id) {
            dups.insert(id.to_string());
        }
    }
    dups.into_iter().collect()
}

impl Corpus {
    pub fn new(docs: Vec<Document>) -> Result<Self> {
        let dups = find_duplicates(docs.iter().map(|d| d.id.as_str()));
        if !dups.is_empty() {
            return Err(Error::DuplicateIds(dups));
        }
        let by_id = docs.iter().enumerate().map(|(i, d)| (d.id.clone(), i)).collect();
        Ok(Self { docs, by_id })
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.by_id.get(id).map(|&i| &self.docs[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.by_id.contains_key(id)
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.docs.iter().map(|d| d.text.as_str())
    }

    /// Ids in `ids` that are not in the corpus, sorted and deduplicated.
    pub fn missing<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> Vec<String> {
        let set: BTreeSet<&str> = ids.into_iter().filter(|id| !self.contains(id)).collect();
        set.into_iter().map(str::to_string).collect()
    }

    /// One JSON object `{"id", "text"}` per line.
    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut docs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let doc: Document = serde_json::from_str(line).map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                msg: e.to_string(),
            })?;
            docs.push(doc);
        }
        Self::new(docs)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for d in &self.docs {
            out.push_str(&serde_json::to_string(d)?);
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

fn read_tsv(path: &Path, fields: usize) -> Result<Vec<Vec<String>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<String> = line.split('\t').map(str::to_string).collect();
        if cols.len() != fields {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                msg: format!("expected {fields} tab-separated fields, found {}", cols.len()),
            });
        }
        rows.push(cols);
    }
    Ok(rows)
}

fn clean(field: &str) -> String {
    field.replace(['\t', '\n', '\r'], " ")
}

/// `qid \t text` per line.
pub fn read_queries(path: &Path) -> Result<Vec<Query>> {
    let queries: Vec<Query> = read_tsv(path, 2)?
        .into_iter()
        .map(|mut c| Query {
            text: c.pop().unwrap(),
            id: c.pop().unwrap(),
        })
        .collect();
    let dups = find_duplicates(queries.iter().map(|q| q.id.as_str()));
    if !dups.is_empty() {
        return Err(Error::DuplicateIds(dups));
    }
    Ok(queries)
}

pub fn write_queries(path: &Path, queries: &[Query]) -> Result<()> {
    let out: String = queries
        .iter()
        .map(|q| format!("{}\t{}\n", clean(&q.id), clean(&q.text)))
        .collect();
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// `query text \t positive doc id \t negative doc id` per line.
pub fn read_triples(path: &Path) -> Result<Vec<TrainTriple>> {
    Ok(read_tsv(path, 3)?
        .into_iter()
        .map(|c| TrainTriple {
            query: c[0].clone(),
            pos: c[1].clone(),
            neg: c[2].clone(),
        })
        .collect())
}

pub fn write_triples(path: &Path, triples: &[TrainTriple]) -> Result<()> {
    let out: String = triples
        .iter()
        .map(|t| format!("{}\t{}\t{}\n", clean(&t.query), clean(&t.pos), clean(&t.neg)))
        .collect();
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_docs: usize,
    pub n_queries: usize,
    pub n_qrels: usize,
    pub n_triples: usize,
    pub avg_doc_len: f64,
    pub avg_query_len: f64,
}

/// A validated corpus with evaluation queries, judgments and optional
/// training triples.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub corpus: Corpus,
    pub queries: Vec<Query>,
    pub qrels: Qrels,
    pub triples: Vec<TrainTriple>,
}

fn mean_words<'a>(texts: impl Iterator<Item = &'a str>) -> f64 {
    let (mut n, mut total) = (0usize, 0usize);
    for t in texts {
        n += 1;
        total += words(t).count();
    }
    if n == 0 {
        0.0
    } else {
        total as f64 / n as f64
    }
}

impl Dataset {
    /// Check cross-references: qrels must name known queries and documents,
    /// triples must name known documents.
    pub fn new(corpus: Corpus, queries: Vec<Query>, qrels: Qrels, triples: Vec<TrainTriple>) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let dups = find_duplicates(queries.iter().map(|q| q.id.as_str()));
        if !dups.is_empty() {
            return Err(Error::DuplicateIds(dups));
        }
        let missing = corpus.missing(
            qrels
                .iter()
                .map(|(_, d, _)| d)
                .chain(triples.iter().flat_map(|t| [t.pos.as_str(), t.neg.as_str()])),
        );
        if !missing.is_empty() {
            return Err(Error::UnknownDocs(missing));
        }
        let qids: BTreeSet<&str> = queries.iter().map(|q| q.id.as_str()).collect();
        let unknown: BTreeSet<&str> = qrels.queries().map(String::as_str).filter(|q| !qids.contains(q)).collect();
        if !unknown.is_empty() {
            return Err(Error::Config(format!(
                "qrels reference unknown query id(s): {:?}",
                unknown.into_iter().collect::<Vec<_>>()
            )));
        }
        Ok(Self {
            corpus,
            queries,
            qrels,
            triples,
        })
    }

    pub fn stats(&self) -> DatasetStats {
        DatasetStats {
            n_docs: self.corpus.len(),
            n_queries: self.queries.len(),
            n_qrels: self.qrels.len(),
            n_triples: self.triples.len(),
            avg_doc_len: mean_words(self.corpus.texts()),
            avg_query_len: mean_words(self.queries.iter().map(|q| q.text.as_str())),
        }
    }

    /// Write `corpus.jsonl`, `queries.tsv`, `qrels.trec` and, when present,
    /// `triples.tsv` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.corpus.write_jsonl(&dir.join("corpus.jsonl"))?;
        write_queries(&dir.join("queries.tsv"), &self.queries)?;
        write_qrels(&dir.join("qrels.trec"), &self.qrels)?;
        if !self.triples.is_empty() {
            write_triples(&dir.join("triples.tsv"), &self.triples)?;
        }
        Ok(())
    }

    /// Inverse of [`Dataset::save`].
    pub fn load(dir: &Path) -> Result<Self> {
        let triples = dir.join("triples.tsv");
        ingest(
            &dir.join("corpus.jsonl"),
            &dir.join("queries.tsv"),
            &dir.join("qrels.trec"),
            triples.exists().then_some(triples.as_path()),
        )
    }
}

/// Load and validate a dataset from its four files.
pub fn ingest(corpus: &Path, queries: &Path, qrels: &Path, triples: Option<&Path>) -> Result<Dataset> {
    let corpus = Corpus::read_jsonl(corpus)?;
    let queries = read_queries(queries)?;
    let qrels = read_qrels(qrels)?;
    let triples = match triples {
        Some(p) => read_triples(p)?,
        None => Vec::new(),
    };
    Dataset::new(corpus, queries, qrels, triples)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, text: &str) -> Document {
        Document {
            id: id.into(),
            text: text.into(),
        }
    }

    fn query(id: &str, text: &str) -> Query {
        Query {
            id: id.into(),
            text: text.into(),
        }
    }

    #[test]
    fn duplicate_doc_ids_rejected() {
        let err = Corpus::new(vec![doc("a", "x"), doc("b", "y"), doc("a", "z")]).unwrap_err();
        assert!(matches!(err, Error::DuplicateIds(ids) if ids == vec!["a".to_string()]));
    }

    #[test]
    fn ingest_round_trip_and_stats() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = Corpus::new(vec![
            doc("d1", "the cat sat"),
            doc("d2", "a dog, barking loudly!"),
            doc("d3", "fish"),
        ])
        .unwrap();
        let mut qrels = Qrels::new();
        qrels.insert("q1", "d1", 1).unwrap();
        let ds = Dataset::new(
            corpus,
            vec![query("q1", "cat"), query("q2", "dog bark")],
            qrels,
            vec![TrainTriple {
                query: "cat".into(),
                pos: "d1".into(),
                neg: "d2".into(),
            }],
        )
        .unwrap();
        ds.save(dir.path()).unwrap();
        let back = Dataset::load(dir.path()).unwrap();
        assert_eq!(back, ds);
        let s = back.stats();
        assert_eq!(s.n_docs, 3);
        // 3 + 4 + 1 tokens over three docs.
        assert!((s.avg_doc_len - 8.0 / 3.0).abs() < 1e-12);
        assert!((s.avg_query_len - 1.5).abs() < 1e-12);
    }

    #[test]
    fn dangling_references_rejected() {
        let corpus = Corpus::new(vec![doc("d1", "x")]).unwrap();
        let mut qrels = Qrels::new();
        qrels.insert("q1", "nope", 1).unwrap();
        let err = Dataset::new(corpus.clone(), vec![query("q1", "x")], qrels, vec![]).unwrap_err();
        assert!(matches!(err, Error::UnknownDocs(ids) if ids == vec!["nope".to_string()]));
        let triple = TrainTriple {
            query: "x".into(),
            pos: "d1".into(),
            neg: "gone".into(),
        };
        let err = Dataset::new(corpus, vec![], Qrels::new(), vec![triple]).unwrap_err();
        assert!(matches!(err, Error::UnknownDocs(ids) if ids == vec!["gone".to_string()]));
    }

    #[test]
    fn malformed_tsv_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("q.tsv");
        fs::write(&p, "q1\tfine\nq2 missing tab\n").unwrap();
        let err = read_queries(&p).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }
}
