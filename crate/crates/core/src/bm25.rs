//! Okapi BM25 over a small in-memory inverted index.
//!
//! IDF uses the non-negative `ln(1 + (N - df + 0.5) / (df + 0.5))` form, so
//! every term contribution is >= 0. Query terms are weighted by their count
//! in the query text.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufWriter, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Document;
use crate::metrics::{MetricError, Ranking};

#[derive(Debug, Error)]
pub enum Bm25Error {
    #[error("invalid BM25 parameters: {0}")]
    InvalidParams(String),
    #[error("cannot build an index over an empty corpus")]
    EmptyCorpus,
    #[error("duplicate document {0} in index input")]
    DuplicateDocument(String),
    #[error("document {0} is not indexed")]
    UnknownDocument(String),
    #[error("no candidates to rank")]
    NoCandidates,
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("index snapshot line {line}: {reason}")]
    Snapshot { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Bm25Error>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.5, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn new(k1: f64, b: f64) -> Result<Self> {
        let p = Self { k1, b };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k1.is_finite() && self.k1 > 0.0) {
            return Err(Bm25Error::InvalidParams(format!("k1 must be > 0, got {}", self.k1)));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(Bm25Error::InvalidParams(format!("b must lie in [0, 1], got {}", self.b)));
        }
        Ok(())
    }
}

/// Lowercased runs of Unicode alphanumerics.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

type TfLookup<'a> = Box<dyn Fn(&str) -> u32 + 'a>;

fn term_counts(tokens: Vec<String>) -> BTreeMap<String, u32> {
    let mut counts = BTreeMap::new();
    for t in tokens {
        *counts.entry(t).or_insert(0) += 1;
    }
    counts
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    /// Ordinal into [`Bm25Index::doc_ids`].
    pub doc: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bm25Index {
    doc_ids: Vec<String>,
    doc_lookup: HashMap<String, u32>,
    doc_lengths: Vec<u32>,
    avg_doc_length: f64,
    /// Postings sorted by doc ordinal.
    postings: BTreeMap<String, Vec<Posting>>,
}

/// Per-term statistics a single document contributes to a score.
#[derive(Debug, Clone, Copy, PartialEq)]
struct TermHit {
    weight: f64,
    tf: f64,
}

/// A query with its candidates' term statistics resolved, ready to be
/// scored under many parameter settings.
#[derive(Debug, Clone)]
pub struct PreparedQuery {
    query_id: String,
    avg_doc_length: f64,
    candidates: Vec<PreparedCandidate>,
}

#[derive(Debug, Clone)]
struct PreparedCandidate {
    doc_id: String,
    length: f64,
    hits: Vec<TermHit>,
    indexed: bool,
}

fn term_score(params: &Bm25Params, hit: TermHit, length: f64, avgdl: f64) -> f64 {
    let norm = 1.0 - params.b + params.b * length / avgdl;
    hit.weight * hit.tf * (params.k1 + 1.0) / (hit.tf + params.k1 * norm)
}

impl PreparedQuery {
    pub fn query_id(&self) -> &str {
        &self.query_id
    }

    pub fn unindexed(&self) -> usize {
        self.candidates.iter().filter(|c| !c.indexed).count()
    }

    pub fn scores(&self, params: &Bm25Params) -> Vec<(String, f64)> {
        self.candidates
            .iter()
            .map(|c| {
                let s = c
                    .hits
                    .iter()
                    .map(|h| term_score(params, *h, c.length, self.avg_doc_length))
                    .sum();
                (c.doc_id.clone(), s)
            })
            .collect()
    }

    pub fn rank(&self, params: &Bm25Params) -> Result<Ranking> {
        if self.candidates.is_empty() {
            return Err(Bm25Error::NoCandidates);
        }
        Ok(Ranking::from_scores(self.query_id.clone(), self.scores(params))?)
    }
}

impl Bm25Index {
    pub fn build<'a, I>(documents: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Document>,
    {
        let mut doc_ids = Vec::new();
        let mut doc_lookup = HashMap::new();
        let mut doc_lengths = Vec::new();
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        for doc in documents {
            let ordinal = doc_ids.len() as u32;
            if doc_lookup.insert(doc.id.clone(), ordinal).is_some() {
                return Err(Bm25Error::DuplicateDocument(doc.id.clone()));
            }
            doc_ids.push(doc.id.clone());
            let tokens = tokenize(&doc.text);
            doc_lengths.push(tokens.len() as u32);
            for (term, tf) in term_counts(tokens) {
                postings.entry(term).or_default().push(Posting { doc: ordinal, tf });
            }
        }
        if doc_ids.is_empty() {
            return Err(Bm25Error::EmptyCorpus);
        }
        let avg_doc_length = doc_lengths.iter().map(|&l| l as f64).sum::<f64>() / doc_ids.len() as f64;
        Ok(Self { doc_ids, doc_lookup, doc_lengths, avg_doc_length, postings })
    }

    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn contains(&self, doc_id: &str) -> bool {
        self.doc_lookup.contains_key(doc_id)
    }

    pub fn doc_length(&self, doc_id: &str) -> Option<u32> {
        self.doc_lookup.get(doc_id).map(|&o| self.doc_lengths[o as usize])
    }

    pub fn doc_frequency(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map_or(&[], Vec::as_slice)
    }

    pub fn term_count(&self) -> usize {
        self.postings.len()
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.doc_count() as f64;
        let df = self.doc_frequency(term) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    fn tf_indexed(&self, term: &str, ordinal: u32) -> u32 {
        let list = self.postings(term);
        list.binary_search_by_key(&ordinal, |p| p.doc)
            .map_or(0, |i| list[i].tf)
    }

    fn prepare_candidate(&self, query_terms: &BTreeMap<String, u32>, doc: &Document) -> PreparedCandidate {
        let (length, tfs, indexed): (f64, TfLookup<'_>, bool) =
            match self.doc_lookup.get(&doc.id) {
                Some(&ord) => (
                    self.doc_lengths[ord as usize] as f64,
                    Box::new(move |t: &str| self.tf_indexed(t, ord)),
                    true,
                ),
                None => {
                    let tokens = tokenize(&doc.text);
                    let len = tokens.len() as f64;
                    let counts = term_counts(tokens);
                    (len, Box::new(move |t: &str| counts.get(t).copied().unwrap_or(0)), false)
                }
            };
        let hits = query_terms
            .iter()
            .filter_map(|(term, &qtf)| {
                let tf = tfs(term);
                (tf > 0).then(|| TermHit { weight: qtf as f64 * self.idf(term), tf: tf as f64 })
            })
            .collect();
        PreparedCandidate { doc_id: doc.id.clone(), length, hits, indexed }
    }

    /// Resolves term statistics for a query and its candidates. Candidates
    /// outside the index use their own length and term counts against the
    /// index's N, df and average length.
    pub fn prepare(&self, query_id: &str, query_text: &str, candidates: &[&Document]) -> PreparedQuery {
        let query_terms = term_counts(tokenize(query_text));
        PreparedQuery {
            query_id: query_id.to_string(),
            avg_doc_length: self.avg_doc_length,
            candidates: candidates.iter().map(|d| self.prepare_candidate(&query_terms, d)).collect(),
        }
    }

    /// BM25 score of an indexed document.
    pub fn score(&self, params: &Bm25Params, query_text: &str, doc_id: &str) -> Result<f64> {
        let &ord = self
            .doc_lookup
            .get(doc_id)
            .ok_or_else(|| Bm25Error::UnknownDocument(doc_id.to_string()))?;
        let length = self.doc_lengths[ord as usize] as f64;
        let mut total = 0.0;
        for (term, qtf) in term_counts(tokenize(query_text)) {
            let tf = self.tf_indexed(&term, ord);
            if tf > 0 {
                let hit = TermHit { weight: qtf as f64 * self.idf(&term), tf: tf as f64 };
                total += term_score(params, hit, length, self.avg_doc_length);
            }
        }
        Ok(total)
    }

    /// Competition-ranked BM25 ordering of `candidates` for a query.
    pub fn rank_candidates(
        &self,
        params: &Bm25Params,
        query_id: &str,
        query_text: &str,
        candidates: &[&Document],
    ) -> Result<Ranking> {
        params.validate()?;
        self.prepare(query_id, query_text, candidates).rank(params)
    }
}

pub const INDEX_FORMAT: &str = "qbd-bm25-index";
pub const INDEX_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum SnapshotLine {
    Header { format: String, version: u32, doc_count: usize, term_count: usize },
    Doc { id: String, length: u32 },
    Term { term: String, postings: Vec<(u32, u32)> },
}

impl Bm25Index {
    /// JSONL dump: one header, then every document in ordinal order, then
    /// every term in lexical order with its `[ordinal, tf]` postings.
    pub fn write_snapshot<W: Write>(&self, out: W) -> Result<()> {
        let mut w = BufWriter::new(out);
        let mut line = |rec: &SnapshotLine| -> Result<()> {
            serde_json::to_writer(&mut w, rec).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
            Ok(())
        };
        line(&SnapshotLine::Header {
            format: INDEX_FORMAT.into(),
            version: INDEX_VERSION,
            doc_count: self.doc_count(),
            term_count: self.term_count(),
        })?;
        for (id, &length) in self.doc_ids.iter().zip(&self.doc_lengths) {
            line(&SnapshotLine::Doc { id: id.clone(), length })?;
        }
        for (term, list) in &self.postings {
            line(&SnapshotLine::Term {
                term: term.clone(),
                postings: list.iter().map(|p| (p.doc, p.tf)).collect(),
            })?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_snapshot<R: BufRead>(input: R) -> Result<Self> {
        let bad = |line: usize, reason: String| Bm25Error::Snapshot { line, reason };
        let mut expected: Option<(usize, usize)> = None;
        let mut doc_ids = Vec::new();
        let mut doc_lookup = HashMap::new();
        let mut doc_lengths = Vec::new();
        let mut postings = BTreeMap::new();
        for (idx, line) in input.lines().enumerate() {
            let lineno = idx + 1;
            let line = line?;
            let rec: SnapshotLine = serde_json::from_str(&line).map_err(|e| bad(lineno, e.to_string()))?;
            match rec {
                SnapshotLine::Header { format, version, doc_count, term_count } => {
                    if lineno != 1 || format != INDEX_FORMAT || version != INDEX_VERSION {
                        return Err(bad(lineno, format!("unexpected header {format} v{version}")));
                    }
                    expected = Some((doc_count, term_count));
                }
                _ if expected.is_none() => return Err(bad(lineno, "missing header".into())),
                SnapshotLine::Doc { id, length } => {
                    doc_lookup.insert(id.clone(), doc_ids.len() as u32);
                    doc_ids.push(id);
                    doc_lengths.push(length);
                }
                SnapshotLine::Term { term, postings: list } => {
                    let list: Vec<Posting> = list.into_iter().map(|(doc, tf)| Posting { doc, tf }).collect();
                    if list.iter().any(|p| p.doc as usize >= doc_ids.len()) {
                        return Err(bad(lineno, format!("posting for {term} references an unknown document")));
                    }
                    if list.windows(2).any(|w| w[0].doc >= w[1].doc) {
                        return Err(bad(lineno, format!("postings for {term} are not sorted")));
                    }
                    postings.insert(term, list);
                }
            }
        }
        let (doc_count, term_count) = expected.ok_or_else(|| bad(0, "empty snapshot".into()))?;
        if doc_ids.len() != doc_count || postings.len() != term_count || doc_ids.is_empty() {
            return Err(bad(0, "document or term count does not match header".into()));
        }
        let avg_doc_length = doc_lengths.iter().map(|&l| l as f64).sum::<f64>() / doc_ids.len() as f64;
        Ok(Self { doc_ids, doc_lookup, doc_lengths, avg_doc_length, postings })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, text: &str) -> Document {
        Document::new(id, text)
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("Heart failure, NYHA-II"), vec!["heart", "failure", "nyha", "ii"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("BM25 BM25"), vec!["bm25", "bm25"]);
        assert_eq!(tokenize("Ünïcode café"), vec!["ünïcode", "café"]);
    }

    #[test]
    fn index_statistics() {
        let docs = [doc("a", "x y z"), doc("b", "x p q r s")];
        let idx = Bm25Index::build(&docs).unwrap();
        assert_eq!(idx.avg_doc_length(), 4.0);
        assert_eq!(idx.doc_frequency("x"), 2);
        assert_eq!(idx.doc_frequency("p"), 1);
        assert_eq!(idx.doc_count(), 2);
        assert_eq!(Bm25Index::build(&docs).unwrap(), idx);
        assert!(matches!(Bm25Index::build(&[]), Err(Bm25Error::EmptyCorpus)));
    }

    #[test]
    fn score_matches_hand_evaluation() {
        // N=2, df(t)=1, tf=2, |d|=4, avgdl=4
        let docs = [doc("a", "t t u v"), doc("b", "w w w w")];
        let idx = Bm25Index::build(&docs).unwrap();
        let s = idx.score(&Bm25Params::default(), "t", "a").unwrap();
        let expected = (1.0f64 + 1.5 / 1.5).ln() * (2.0 * 2.5) / (2.0 + 1.5);
        assert!((s - expected).abs() < 1e-12);
        assert!((s - 0.9902).abs() < 1e-4);
    }

    #[test]
    fn disjoint_query_scores_zero() {
        let idx = Bm25Index::build(&[doc("a", "alpha beta")]).unwrap();
        assert_eq!(idx.score(&Bm25Params::default(), "gamma delta", "a").unwrap(), 0.0);
        assert!(matches!(
            idx.score(&Bm25Params::default(), "alpha", "zz"),
            Err(Bm25Error::UnknownDocument(_))
        ));
    }

    #[test]
    fn b_zero_ignores_length() {
        let docs = [doc("short", "t x"), doc("long", "t x y z w v u s"), doc("other", "q")];
        let idx = Bm25Index::build(&docs).unwrap();
        let p = Bm25Params::new(1.5, 0.0).unwrap();
        assert_eq!(idx.score(&p, "t", "short").unwrap(), idx.score(&p, "t", "long").unwrap());
        let p = Bm25Params::new(1.5, 1.0).unwrap();
        assert!(idx.score(&p, "t", "short").unwrap() > idx.score(&p, "t", "long").unwrap());
    }

    #[test]
    fn params_validation() {
        assert!(Bm25Params::new(0.0, 0.5).is_err());
        assert!(Bm25Params::new(1.2, 1.1).is_err());
        assert!(Bm25Params::new(1.2, -0.1).is_err());
        assert_eq!(Bm25Params::default(), Bm25Params { k1: 1.5, b: 0.75 });
    }

    #[test]
    fn rank_candidates_examples() {
        let docs = [
            doc("all", "heart failure trial"),
            doc("some", "heart surgery outcomes"),
            doc("none", "renal diet study"),
        ];
        let idx = Bm25Index::build(&docs).unwrap();
        let refs: Vec<&Document> = docs.iter().collect();
        let r = idx.rank_candidates(&Bm25Params::default(), "q", "heart failure trial", &refs).unwrap();
        assert_eq!(r.entries[0].doc_id, "all");
        assert_eq!(r.entries[0].rank, 1);

        let single = idx.rank_candidates(&Bm25Params::default(), "q", "x", &refs[..1]).unwrap();
        assert_eq!(single.entries[0].rank, 1);

        let twins = [doc("t1", "same words"), doc("t2", "same words")];
        let idx2 = Bm25Index::build(&twins).unwrap();
        let tr: Vec<&Document> = twins.iter().collect();
        let r = idx2.rank_candidates(&Bm25Params::default(), "q", "same", &tr).unwrap();
        assert_eq!(r.entries.iter().map(|e| e.rank).collect::<Vec<_>>(), vec![1, 1]);
        assert!(matches!(
            idx2.rank_candidates(&Bm25Params::default(), "q", "same", &[]),
            Err(Bm25Error::NoCandidates)
        ));
    }

    #[test]
    fn unindexed_candidates_use_on_the_fly_stats() {
        let indexed = [doc("a", "t t u v"), doc("b", "w w w w")];
        let idx = Bm25Index::build(&indexed).unwrap();
        let outsider = doc("c", "t t u v");
        let prepared = idx.prepare("q", "t", &[&indexed[0], &outsider]);
        assert_eq!(prepared.unindexed(), 1);
        let scores = prepared.scores(&Bm25Params::default());
        assert_eq!(scores[0].1, scores[1].1);
    }

    #[test]
    fn snapshot_round_trip() {
        let docs = [doc("a", "heart failure heart"), doc("b", "kidney failure"), doc("c", "")];
        let idx = Bm25Index::build(&docs).unwrap();
        let mut buf = Vec::new();
        idx.write_snapshot(&mut buf).unwrap();
        let back = Bm25Index::read_snapshot(&buf[..]).unwrap();
        assert_eq!(back, idx);
        let truncated = &buf[..buf.len() / 2];
        assert!(Bm25Index::read_snapshot(truncated).is_err());
    }
}
