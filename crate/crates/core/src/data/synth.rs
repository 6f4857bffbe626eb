use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::corpus::{Corpus, Dataset, Document, Query, TrainTriple};
use crate::error::{Error, Result};
use crate::eval::Qrels;

/// Knobs of the synthetic two-domain benchmark.
///
/// Every topic owns a disjoint block of shared words. Each domain also owns
/// exclusive words, each tied to one shared word of one topic as its
/// synonym; in documents the synonym follows its shared word with
/// probability `cooccurrence`. Queries substitute synonyms for their shared
/// words with probability `synonym_rate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub n_topics: usize,
    pub shared_terms: usize,
    pub exclusive_terms: usize,
    pub docs_per_domain: usize,
    pub queries_per_domain: usize,
    /// Source queries held out for evaluation; the rest generate triples.
    pub heldout_source_queries: usize,
    pub cooccurrence: f64,
    pub synonym_rate: f64,
    /// Probability a document word is drawn from another topic.
    pub noise: f64,
    pub doc_len: (usize, usize),
    pub query_len: (usize, usize),
    pub triples: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_topics: 8,
            shared_terms: 200,
            exclusive_terms: 60,
            docs_per_domain: 800,
            queries_per_domain: 100,
            heldout_source_queries: 50,
            cooccurrence: 0.8,
            synonym_rate: 0.5,
            noise: 0.35,
            doc_len: (8, 12),
            query_len: (2, 4),
            triples: 4000,
            seed: 7,
        }
    }
}

/// Minimum in-window co-occurrences of every target-exclusive word with its
/// topic's shared words.
pub const MIN_AUDIT_COUNT: usize = 5;
/// Co-occurrence window half-width used by the audit.
pub const AUDIT_WINDOW: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Domain {
    Source,
    Target,
}

impl Domain {
    fn prefix(self) -> &'static str {
        match self {
            Domain::Source => "s",
            Domain::Target => "t",
        }
    }
}

#[derive(Clone, Debug)]
struct Lexicon {
    /// `topics[t]` = shared words of topic `t`.
    topics: Vec<Vec<String>>,
    /// `(domain, shared word) -> exclusive synonym`.
    synonyms: BTreeMap<(u8, String), String>,
    /// `(domain, topic) -> exclusive words of that topic`.
    exclusive: BTreeMap<(u8, usize), Vec<String>>,
}

fn shared_word(topic: usize, i: usize) -> String {
    format!("w{topic}x{i}")
}

fn exclusive_word(domain: Domain, topic: usize, j: usize) -> String {
    format!("{}{topic}y{j}", domain.prefix())
}

impl Lexicon {
    fn new(spec: &SynthSpec) -> Self {
        let per_topic = spec.shared_terms / spec.n_topics;
        let topics: Vec<Vec<String>> = (0..spec.n_topics)
            .map(|t| (0..per_topic).map(|i| shared_word(t, i)).collect())
            .collect();
        let mut synonyms = BTreeMap::new();
        let mut exclusive: BTreeMap<(u8, usize), Vec<String>> = BTreeMap::new();
        for domain in [Domain::Source, Domain::Target] {
            for e in 0..spec.exclusive_terms {
                let topic = e % spec.n_topics;
                let j = e / spec.n_topics;
                let word = exclusive_word(domain, topic, j);
                synonyms.insert((domain as u8, topics[topic][j].clone()), word.clone());
                exclusive.entry((domain as u8, topic)).or_default().push(word);
            }
        }
        Self {
            topics,
            synonyms,
            exclusive,
        }
    }

    fn synonym(&self, domain: Domain, word: &str) -> Option<&String> {
        self.synonyms.get(&(domain as u8, word.to_string()))
    }
}

fn check(spec: &SynthSpec) -> Result<()> {
    let fail = |m: String| Err(Error::Infeasible(m));
    if spec.n_topics < 2 {
        return fail("need at least 2 topics".into());
    }
    let per_topic = spec.shared_terms / spec.n_topics;
    if per_topic == 0 {
        return fail(format!("{} shared terms cannot cover {} topics", spec.shared_terms, spec.n_topics));
    }
    if spec.exclusive_terms == 0 || spec.exclusive_terms.div_ceil(spec.n_topics) > per_topic {
        return fail(format!(
            "{} exclusive terms need {} synonym slots per topic, only {per_topic} shared terms each",
            spec.exclusive_terms,
            spec.exclusive_terms.div_ceil(spec.n_topics)
        ));
    }
    if spec.heldout_source_queries >= spec.queries_per_domain {
        return fail("held-out source queries must leave training queries".into());
    }
    if spec.docs_per_domain < 2 * spec.n_topics {
        return fail("each topic needs at least two documents per domain".into());
    }
    let (lo, hi) = spec.doc_len;
    let (qlo, qhi) = spec.query_len;
    if lo == 0 || lo > hi || qlo == 0 || qlo > qhi {
        return fail("length ranges must be non-empty and positive".into());
    }
    for (name, p) in [
        ("cooccurrence", spec.cooccurrence),
        ("synonym_rate", spec.synonym_rate),
        ("noise", spec.noise),
    ] {
        if !(0.0..=1.0).contains(&p) {
            return fail(format!("{name} must be a probability, got {p}"));
        }
    }
    if spec.cooccurrence == 0.0 {
        return fail("cooccurrence 0 never places an exclusive word".into());
    }
    Ok(())
}

fn gen_doc(rng: &mut ChaCha8Rng, lex: &Lexicon, spec: &SynthSpec, domain: Domain, topic: usize) -> String {
    let len = rng.random_range(spec.doc_len.0..=spec.doc_len.1);
    let mut out: Vec<&str> = Vec::with_capacity(len * 2);
    while out.len() < len {
        if rng.random_bool(spec.noise) {
            let mut other = rng.random_range(0..spec.n_topics - 1);
            if other >= topic {
                other += 1;
            }
            out.push(lex.topics[other].choose(rng).expect("non-empty"));
            continue;
        }
        let w = lex.topics[topic].choose(rng).expect("non-empty");
        out.push(w);
        if let Some(syn) = lex.synonym(domain, w) {
            if rng.random_bool(spec.cooccurrence) {
                out.push(syn);
            }
        }
    }
    out.join(" ")
}

fn gen_query(rng: &mut ChaCha8Rng, lex: &Lexicon, spec: &SynthSpec, domain: Domain, topic: usize) -> String {
    let len = rng.random_range(spec.query_len.0..=spec.query_len.1);
    // Half the words come from the synonym-bearing part of the topic so the
    // exclusive vocabulary matters for a sizable share of queries.
    let with_syn: Vec<&String> = lex.topics[topic]
        .iter()
        .filter(|w| lex.synonym(domain, w).is_some())
        .collect();
    let mut words: Vec<&str> = Vec::with_capacity(len);
    while words.len() < len {
        let w: &String = if rng.random_bool(0.5) {
            with_syn.choose(rng).expect("every topic has a synonym")
        } else {
            lex.topics[topic].choose(rng).expect("non-empty")
        };
        let w = match lex.synonym(domain, w) {
            Some(s) if rng.random_bool(spec.synonym_rate) => s.as_str(),
            _ => w.as_str(),
        };
        if !words.contains(&w) {
            words.push(w);
        }
    }
    words.join(" ")
}

/// One domain's corpus and queries; document `i` has topic `i % n_topics`.
fn gen_domain(
    rng: &mut ChaCha8Rng,
    lex: &Lexicon,
    spec: &SynthSpec,
    domain: Domain,
) -> (Vec<Document>, Vec<(Query, usize)>) {
    let p = domain.prefix();
    let docs = (0..spec.docs_per_domain)
        .map(|i| Document {
            id: format!("{p}d{i:05}"),
            text: gen_doc(rng, lex, spec, domain, i % spec.n_topics),
        })
        .collect();
    let queries = (0..spec.queries_per_domain)
        .map(|i| {
            let topic = i % spec.n_topics;
            (
                Query {
                    id: format!("{p}q{i:04}"),
                    text: gen_query(rng, lex, spec, domain, topic),
                },
                topic,
            )
        })
        .collect();
    (docs, queries)
}

fn topic_qrels(queries: &[(Query, usize)], docs: &[Document], n_topics: usize) -> Result<Qrels> {
    let mut qrels = Qrels::new();
    for (q, topic) in queries {
        for (i, d) in docs.iter().enumerate() {
            if i % n_topics == *topic {
                qrels.insert(&q.id, &d.id, 1)?;
            }
        }
    }
    Ok(qrels)
}

/// Per target-exclusive word: in-window co-occurrences with shared words of its topic.
pub type AuditCounts = BTreeMap<String, usize>;

#[derive(Clone, Debug)]
pub struct SynthOutput {
    /// Held-out source queries with judgments, plus training triples.
    pub source: Dataset,
    /// Target corpus and evaluation queries; no triples.
    pub target: Dataset,
    pub audit: AuditCounts,
}

fn audit(lex: &Lexicon, docs: &[Document], n_topics: usize) -> AuditCounts {
    let mut counts: AuditCounts = BTreeMap::new();
    let topic_of = |w: &str| lex.topics.iter().position(|ws| ws.iter().any(|x| x == w));
    for t in 0..n_topics {
        for w in lex.exclusive.get(&(Domain::Target as u8, t)).into_iter().flatten() {
            counts.insert(w.clone(), 0);
        }
    }
    for d in docs {
        let toks: Vec<&str> = d.text.split(' ').collect();
        for (i, tok) in toks.iter().enumerate() {
            let Some(c) = counts.get_mut(*tok) else { continue };
            let topic: usize = tok[1..tok.find('y').expect("exclusive word shape")].parse().expect("topic index");
            let lo = i.saturating_sub(AUDIT_WINDOW);
            let hi = (i + AUDIT_WINDOW).min(toks.len() - 1);
            if (lo..=hi).any(|j| j != i && topic_of(toks[j]) == Some(topic)) {
                *c += 1;
            }
        }
    }
    counts
}

pub fn synth_generate(spec: &SynthSpec) -> Result<SynthOutput> {
    check(spec)?;
    let lex = Lexicon::new(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (src_docs, src_queries) = gen_domain(&mut rng, &lex, spec, Domain::Source);
    let (tgt_docs, tgt_queries) = gen_domain(&mut rng, &lex, spec, Domain::Target);

    let (heldout, train) = src_queries.split_at(spec.heldout_source_queries);
    let mut by_topic: Vec<Vec<&Document>> = vec![Vec::new(); spec.n_topics];
    for (i, d) in src_docs.iter().enumerate() {
        by_topic[i % spec.n_topics].push(d);
    }
    let triples: Vec<TrainTriple> = (0..spec.triples)
        .map(|_| {
            let (q, topic) = &train[rng.random_range(0..train.len())];
            let pos = by_topic[*topic].choose(&mut rng).expect("topic has docs");
            let mut other = rng.random_range(0..spec.n_topics - 1);
            if other >= *topic {
                other += 1;
            }
            let neg = by_topic[other].choose(&mut rng).expect("topic has docs");
            TrainTriple {
                query: q.text.clone(),
                pos: pos.id.clone(),
                neg: neg.id.clone(),
            }
        })
        .collect();

    let audit = audit(&lex, &tgt_docs, spec.n_topics);
    let weak: Vec<String> = audit
        .iter()
        .filter(|(_, &c)| c < MIN_AUDIT_COUNT)
        .map(|(w, c)| format!("{w} ({c})"))
        .collect();
    if !weak.is_empty() {
        return Err(Error::Infeasible(format!(
            "target-exclusive words co-occur with their topic fewer than {MIN_AUDIT_COUNT} times: {weak:?}"
        )));
    }

    let source = Dataset::new(
        Corpus::new(src_docs.clone())?,
        heldout.iter().map(|(q, _)| q.clone()).collect(),
        topic_qrels(heldout, &src_docs, spec.n_topics)?,
        triples,
    )?;
    let target = Dataset::new(
        Corpus::new(tgt_docs.clone())?,
        tgt_queries.iter().map(|(q, _)| q.clone()).collect(),
        topic_qrels(&tgt_queries, &tgt_docs, spec.n_topics)?,
        Vec::new(),
    )?;
    Ok(SynthOutput { source, target, audit })
}
