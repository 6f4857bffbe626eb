use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::qrels::Qrels;
use crate::retrieval::{hit_order, Hit, RankedList};

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

/// `qid 0 docid grade` per line.
pub fn read_qrels(path: &Path) -> Result<Qrels> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_qrels(&text, path)
}

pub fn parse_qrels(text: &str, path: &Path) -> Result<Qrels> {
    let mut qrels = Qrels::new();
    for (i, line) in text.lines().enumerate() {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.is_empty() {
            continue;
        }
        if f.len() != 4 {
            return Err(parse_err(path, i + 1, format!("expected 4 fields, found {}", f.len())));
        }
        let grade: i64 = f[3]
            .parse()
            .map_err(|_| parse_err(path, i + 1, format!("grade `{}` is not an integer", f[3])))?;
        if grade < 0 {
            return Err(parse_err(path, i + 1, format!("negative grade {grade}")));
        }
        let grade = u32::try_from(grade).map_err(|_| parse_err(path, i + 1, "grade too large"))?;
        qrels
            .insert(f[0], f[2], grade)
            .map_err(|_| parse_err(path, i + 1, format!("duplicate judgment {} {}", f[0], f[2])))?;
    }
    Ok(qrels)
}

pub fn format_qrels(qrels: &Qrels) -> String {
    let mut s = String::new();
    for (q, d, g) in qrels.iter() {
        let _ = writeln!(s, "{q} 0 {d} {g}");
    }
    s
}

pub fn write_qrels(path: &Path, qrels: &Qrels) -> Result<()> {
    fs::write(path, format_qrels(qrels)).map_err(|e| Error::io(path, e))
}

/// `qid Q0 docid rank score tag` lines; ranks are regenerated from the
/// ranking order and scores printed with six decimals.
pub fn format_run(runs: &[RankedList], tag: &str) -> String {
    let mut s = String::new();
    for run in runs {
        let mut hits: Vec<&Hit> = run.hits.iter().collect();
        hits.sort_by(|a, b| hit_order(a, b));
        for (rank, h) in hits.iter().enumerate() {
            let _ = writeln!(s, "{} Q0 {} {} {:.6} {}", run.query_id, h.doc_id, rank + 1, h.score, tag);
        }
    }
    s
}

pub fn write_run(path: &Path, runs: &[RankedList], tag: &str) -> Result<()> {
    fs::write(path, format_run(runs, tag)).map_err(|e| Error::io(path, e))
}

pub fn read_run(path: &Path) -> Result<Vec<RankedList>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_run(&text, path)
}

/// Parse a run, grouping by query in order of first appearance and ordering
/// each query's hits by rank.
pub fn parse_run(text: &str, path: &Path) -> Result<Vec<RankedList>> {
    let mut order: Vec<String> = Vec::new();
    let mut by_query: BTreeMap<String, Vec<(usize, Hit)>> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.is_empty() {
            continue;
        }
        if f.len() != 6 {
            return Err(parse_err(path, i + 1, format!("expected 6 fields, found {}", f.len())));
        }
        let rank: usize = f[3]
            .parse()
            .map_err(|_| parse_err(path, i + 1, format!("rank `{}` is not an integer", f[3])))?;
        let score: f64 = f[4]
            .parse()
            .map_err(|_| parse_err(path, i + 1, format!("score `{}` is not a number", f[4])))?;
        let entry = by_query.entry(f[0].to_string()).or_insert_with(|| {
            order.push(f[0].to_string());
            Vec::new()
        });
        if entry.iter().any(|(_, h)| h.doc_id == f[2]) {
            return Err(parse_err(path, i + 1, format!("duplicate doc {} for query {}", f[2], f[0])));
        }
        entry.push((
            rank,
            Hit {
                doc_id: f[2].to_string(),
                score,
            },
        ));
    }
    Ok(order
        .into_iter()
        .map(|q| {
            let mut hits = by_query.remove(&q).unwrap_or_default();
            hits.sort_by_key(|(r, _)| *r);
            RankedList {
                query_id: q,
                hits: hits.into_iter().map(|(_, h)| h).collect(),
            }
        })
        .collect())
}
