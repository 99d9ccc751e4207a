//! Documents, graded judgments, candidate pools and the train/test split.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const VALID_GRADES: [u8; 3] = [0, 1, 2];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Malformed { path: PathBuf, line: usize, reason: String },
    #[error("{path}:{line}: grade {grade} is not one of 0, 1, 2")]
    InvalidGrade { path: PathBuf, line: usize, grade: i64 },
    #[error("{path}:{line}: unknown document id {id}")]
    UnknownId { path: PathBuf, line: usize, id: String },
    #[error("{path}:{line}: duplicate document id {id}")]
    DuplicateDocument { path: PathBuf, line: usize, id: String },
    #[error("duplicate judgment for ({query_id}, {doc_id})")]
    DuplicateJudgment { query_id: String, doc_id: String },
    #[error("invalid split parameters: {0}")]
    InvalidSplitConfig(String),
    #[error("not enough pairs to form a training set: {0}")]
    InsufficientPairs(String),
}

pub type Result<T> = std::result::Result<T, CorpusError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self { id: id.into(), text: text.into(), metadata: BTreeMap::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GradedJudgment {
    pub query_id: String,
    pub doc_id: String,
    pub grade: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidatePool {
    pub query_id: String,
    pub candidates: Vec<(String, u8)>,
}

pub type DocumentMap = BTreeMap<String, Document>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io { path: path.to_path_buf(), source }
}

/// Reads a JSONL document file. Blank lines are skipped.
pub fn load_documents(path: &Path) -> Result<DocumentMap> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut docs = DocumentMap::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
            path: path.to_path_buf(),
            line: lineno,
            reason: e.to_string(),
        })?;
        if doc.id.is_empty() {
            return Err(CorpusError::Malformed {
                path: path.to_path_buf(),
                line: lineno,
                reason: "empty document id".into(),
            });
        }
        if docs.contains_key(&doc.id) {
            return Err(CorpusError::DuplicateDocument { path: path.to_path_buf(), line: lineno, id: doc.id });
        }
        docs.insert(doc.id.clone(), doc);
    }
    Ok(docs)
}

/// Parses one qrels line: `query_id <ignored> doc_id grade`.
pub fn parse_qrels_line(line: &str) -> std::result::Result<(String, String, i64), String> {
    let cols: Vec<&str> = line.split_whitespace().collect();
    if cols.len() != 4 {
        return Err(format!("expected 4 whitespace-separated columns, found {}", cols.len()));
    }
    let grade: i64 = cols[3]
        .parse()
        .map_err(|_| format!("grade {:?} is not an integer", cols[3]))?;
    Ok((cols[0].to_string(), cols[2].to_string(), grade))
}

/// Reads a qrels file, validating grades and (when given) that both ids
/// refer to loaded documents.
pub fn load_judgments(path: &Path, documents: Option<&DocumentMap>) -> Result<Vec<GradedJudgment>> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (query_id, doc_id, grade) = parse_qrels_line(&line).map_err(|reason| CorpusError::Malformed {
            path: path.to_path_buf(),
            line: lineno,
            reason,
        })?;
        if !VALID_GRADES.iter().any(|&g| i64::from(g) == grade) {
            return Err(CorpusError::InvalidGrade { path: path.to_path_buf(), line: lineno, grade });
        }
        if let Some(docs) = documents {
            for id in [&query_id, &doc_id] {
                if !docs.contains_key(id) {
                    return Err(CorpusError::UnknownId { path: path.to_path_buf(), line: lineno, id: id.clone() });
                }
            }
        }
        out.push(GradedJudgment { query_id, doc_id, grade: grade as u8 });
    }
    Ok(out)
}

pub fn load_corpus(documents_path: &Path, judgments_path: &Path) -> Result<(DocumentMap, Vec<GradedJudgment>)> {
    let docs = load_documents(documents_path)?;
    let judgments = load_judgments(judgments_path, Some(&docs))?;
    Ok((docs, judgments))
}

/// Groups judgments into one pool per query, ordered by query id.
/// Candidates keep judgment-file order.
pub fn build_pools(judgments: &[GradedJudgment]) -> Result<Vec<CandidatePool>> {
    let mut pools: BTreeMap<&str, Vec<(String, u8)>> = BTreeMap::new();
    let mut seen: HashSet<(&str, &str)> = HashSet::new();
    for j in judgments {
        if !seen.insert((j.query_id.as_str(), j.doc_id.as_str())) {
            return Err(CorpusError::DuplicateJudgment { query_id: j.query_id.clone(), doc_id: j.doc_id.clone() });
        }
        pools.entry(&j.query_id).or_default().push((j.doc_id.clone(), j.grade));
    }
    Ok(pools
        .into_iter()
        .map(|(q, candidates)| CandidatePool { query_id: q.to_string(), candidates })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub seed: u64,
    pub per_grade_cap: usize,
    pub pure_test_fraction: f64,
    pub train_pair_budget: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { seed: 0, per_grade_cap: 10, pure_test_fraction: 0.20, train_pair_budget: 100 }
    }
}

impl SplitConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    /// ⌈fraction · n⌉, tolerant of binary representation error in the
    /// fraction (0.2 · 15 must give 3, not 4).
    pub fn pure_test_count(&self, n_queries: usize) -> usize {
        let raw = self.pure_test_fraction * n_queries as f64;
        (raw - 1e-9).ceil().max(0.0) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainPair {
    pub query_id: String,
    pub doc_id: String,
    pub grade: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub config: SplitConfig,
    pub train_pairs: Vec<TrainPair>,
    pub test_lists: BTreeMap<String, Vec<(String, u8)>>,
    pub pure_test_queries: BTreeSet<String>,
    /// Test candidates dropped because the same document is a training candidate.
    pub removed_for_disjointness: usize,
}

impl DatasetSplit {
    pub fn seed(&self) -> u64 {
        self.config.seed
    }

    pub fn train_queries(&self) -> BTreeSet<&str> {
        self.train_pairs.iter().map(|p| p.query_id.as_str()).collect()
    }

    pub fn train_doc_ids(&self) -> BTreeSet<&str> {
        self.train_pairs.iter().map(|p| p.doc_id.as_str()).collect()
    }

    /// Training pairs grouped per query, as graded lists.
    pub fn train_lists(&self) -> BTreeMap<String, Vec<(String, u8)>> {
        let mut out: BTreeMap<String, Vec<(String, u8)>> = BTreeMap::new();
        for p in &self.train_pairs {
            out.entry(p.query_id.clone()).or_default().push((p.doc_id.clone(), p.grade));
        }
        out
    }

    pub fn train_pools(&self) -> Vec<CandidatePool> {
        self.train_lists()
            .into_iter()
            .map(|(query_id, candidates)| CandidatePool { query_id, candidates })
            .collect()
    }
}

/// Splits judged pools into a small training pair set and a disjoint test set.
///
/// Every random step draws from one ChaCha8 stream seeded by `config.seed`,
/// so identical inputs produce identical splits.
pub fn split_dataset(pools: &[CandidatePool], config: &SplitConfig) -> Result<DatasetSplit> {
    if pools.is_empty() {
        return Err(CorpusError::InvalidSplitConfig("no candidate pools".into()));
    }
    if !(config.pure_test_fraction > 0.0 && config.pure_test_fraction < 1.0) {
        return Err(CorpusError::InvalidSplitConfig(format!(
            "pure_test_fraction must lie in (0, 1), got {}",
            config.pure_test_fraction
        )));
    }
    if config.per_grade_cap == 0 || config.train_pair_budget == 0 {
        return Err(CorpusError::InvalidSplitConfig("per_grade_cap and train_pair_budget must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    // (1) up to per_grade_cap candidates per grade, per query
    let mut pools: Vec<&CandidatePool> = pools.iter().collect();
    pools.sort_by(|a, b| a.query_id.cmp(&b.query_id));
    let mut sampled: BTreeMap<String, Vec<(String, u8)>> = BTreeMap::new();
    for pool in &pools {
        let mut by_grade: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
        for (i, (_, g)) in pool.candidates.iter().enumerate() {
            by_grade.entry(*g).or_default().push(i);
        }
        let mut keep: Vec<usize> = Vec::new();
        for (_, mut idxs) in by_grade {
            if idxs.len() > config.per_grade_cap {
                idxs.shuffle(&mut rng);
                idxs.truncate(config.per_grade_cap);
            }
            keep.extend(idxs);
        }
        keep.sort_unstable();
        sampled.insert(pool.query_id.clone(), keep.into_iter().map(|i| pool.candidates[i].clone()).collect());
    }

    // (2) pure test queries
    let mut queries: Vec<String> = sampled.keys().cloned().collect();
    let n_pure = config.pure_test_count(queries.len());
    queries.shuffle(&mut rng);
    let pure_test_queries: BTreeSet<String> = queries[..n_pure].iter().cloned().collect();

    // (3) flatten the rest into pairs and shuffle
    let mut pairs: Vec<TrainPair> = sampled
        .iter()
        .filter(|(q, _)| !pure_test_queries.contains(*q))
        .flat_map(|(q, cands)| {
            cands.iter().map(move |(d, g)| TrainPair { query_id: q.clone(), doc_id: d.clone(), grade: *g })
        })
        .collect();
    pairs.shuffle(&mut rng);

    // (4) budgeted selection, (5) drop single-candidate queries
    pairs.truncate(config.train_pair_budget);
    let mut per_query: HashMap<&str, usize> = HashMap::new();
    for p in &pairs {
        *per_query.entry(p.query_id.as_str()).or_default() += 1;
    }
    let keep: Vec<bool> = pairs.iter().map(|p| per_query[p.query_id.as_str()] >= 2).collect();
    let train_pairs: Vec<TrainPair> = pairs
        .iter()
        .zip(&keep)
        .filter(|(_, k)| **k)
        .map(|(p, _)| p.clone())
        .collect();
    if train_pairs.is_empty() {
        return Err(CorpusError::InsufficientPairs(format!(
            "{} candidate pairs selected, none belongs to a query with two or more selected candidates",
            pairs.len()
        )));
    }

    // (6) everything else is test, (7) minus any training document
    let train_keys: HashSet<(&str, &str)> =
        train_pairs.iter().map(|p| (p.query_id.as_str(), p.doc_id.as_str())).collect();
    let train_docs: HashSet<&str> = train_pairs.iter().map(|p| p.doc_id.as_str()).collect();
    let mut test_lists: BTreeMap<String, Vec<(String, u8)>> = BTreeMap::new();
    let mut removed = 0usize;
    for (q, cands) in &sampled {
        let mut list = Vec::new();
        for (d, g) in cands {
            if train_keys.contains(&(q.as_str(), d.as_str())) {
                continue;
            }
            if train_docs.contains(d.as_str()) {
                removed += 1;
                continue;
            }
            list.push((d.clone(), *g));
        }
        if !list.is_empty() {
            test_lists.insert(q.clone(), list);
        }
    }
    if removed > 0 {
        log::info!("removed {removed} test candidates shared with the training set");
    }

    Ok(DatasetSplit {
        config: config.clone(),
        train_pairs,
        test_lists,
        pure_test_queries,
        removed_for_disjointness: removed,
    })
}

pub const SPLIT_FORMAT: &str = "qbd-split";
pub const SPLIT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum SplitLine {
    Header {
        format: String,
        version: u32,
        config: SplitConfig,
        pure_test_queries: BTreeSet<String>,
        removed_for_disjointness: usize,
    },
    Train(TrainPair),
    Test {
        query_id: String,
        candidates: Vec<(String, u8)>,
    },
}

/// Writes the split as JSONL: a header record, then train pairs, then one
/// record per test list.
pub fn write_split<W: Write>(split: &DatasetSplit, out: W) -> std::io::Result<()> {
    let mut w = BufWriter::new(out);
    let header = SplitLine::Header {
        format: SPLIT_FORMAT.into(),
        version: SPLIT_VERSION,
        config: split.config.clone(),
        pure_test_queries: split.pure_test_queries.clone(),
        removed_for_disjointness: split.removed_for_disjointness,
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for p in &split.train_pairs {
        serde_json::to_writer(&mut w, &SplitLine::Train(p.clone()))?;
        w.write_all(b"\n")?;
    }
    for (q, cands) in &split.test_lists {
        serde_json::to_writer(&mut w, &SplitLine::Test { query_id: q.clone(), candidates: cands.clone() })?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn save_split(split: &DatasetSplit, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    write_split(split, file).map_err(io_err(path))
}

pub fn load_split(path: &Path) -> Result<DatasetSplit> {
    let file = File::open(path).map_err(io_err(path))?;
    let malformed = |line: usize, reason: String| CorpusError::Malformed { path: path.to_path_buf(), line, reason };
    let mut split: Option<DatasetSplit> = None;
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SplitLine = serde_json::from_str(&line).map_err(|e| malformed(idx + 1, e.to_string()))?;
        match (rec, split.as_mut()) {
            (SplitLine::Header { format, version, config, pure_test_queries, removed_for_disjointness }, None) => {
                if format != SPLIT_FORMAT || version != SPLIT_VERSION {
                    return Err(malformed(idx + 1, format!("unsupported split format {format} v{version}")));
                }
                split = Some(DatasetSplit {
                    config,
                    train_pairs: Vec::new(),
                    test_lists: BTreeMap::new(),
                    pure_test_queries,
                    removed_for_disjointness,
                });
            }
            (SplitLine::Header { .. }, Some(_)) => return Err(malformed(idx + 1, "second header record".into())),
            (_, None) => return Err(malformed(idx + 1, "missing header record".into())),
            (SplitLine::Train(p), Some(s)) => s.train_pairs.push(p),
            (SplitLine::Test { query_id, candidates }, Some(s)) => {
                s.test_lists.insert(query_id, candidates);
            }
        }
    }
    split.ok_or_else(|| malformed(0, "empty split file".into()))
}

#[cfg(test)]
mod tests {
    use super::*;


    fn judgments(rows: &[(&str, &str, u8)]) -> Vec<GradedJudgment> {
        rows.iter()
            .map(|(q, d, g)| GradedJudgment { query_id: q.to_string(), doc_id: d.to_string(), grade: *g })
            .collect()
    }

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn docs_file() -> tempfile::NamedTempFile {
        write_tmp(
            "{\"id\":\"q1\",\"text\":\"query one\"}\n\n{\"id\":\"d7\",\"text\":\"doc seven\",\"metadata\":{\"src\":\"x\"}}\n",
        )
    }

    #[test]
    fn qrels_line_maps_fields() {
        let docs = docs_file();
        let qrels = write_tmp("q1 0 d7 2\n");
        let (map, js) = load_corpus(docs.path(), qrels.path()).unwrap();
        assert_eq!(map.len(), 2);
        assert_eq!(map["d7"].metadata["src"], "x");
        assert_eq!(js, judgments(&[("q1", "d7", 2)]));
    }

    #[test]
    fn empty_judgments_file_is_fine() {
        let docs = docs_file();
        let qrels = write_tmp("");
        let (_, js) = load_corpus(docs.path(), qrels.path()).unwrap();
        assert!(js.is_empty());
    }

    #[test]
    fn bad_grade_names_the_line() {
        let docs = docs_file();
        let qrels = write_tmp("q1 0 d7 2\nq1 0 d7 3\n");
        match load_corpus(docs.path(), qrels.path()) {
            Err(CorpusError::InvalidGrade { line, grade, .. }) => assert_eq!((line, grade), (2, 3)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_and_unknown_ids() {
        let docs = docs_file();
        let qrels = write_tmp("q1 0 d7\n");
        assert!(matches!(load_corpus(docs.path(), qrels.path()), Err(CorpusError::Malformed { line: 1, .. })));
        let qrels = write_tmp("q1 0 d9 1\n");
        assert!(matches!(load_corpus(docs.path(), qrels.path()), Err(CorpusError::UnknownId { line: 1, .. })));
        let bad_docs = write_tmp("{\"id\":\"a\",\"text\":\"x\"}\nnot json\n");
        assert!(matches!(load_documents(bad_docs.path()), Err(CorpusError::Malformed { line: 2, .. })));
        let dup_docs = write_tmp("{\"id\":\"a\",\"text\":\"x\"}\n{\"id\":\"a\",\"text\":\"y\"}\n");
        assert!(matches!(load_documents(dup_docs.path()), Err(CorpusError::DuplicateDocument { line: 2, .. })));
    }

    #[test]
    fn long_text_is_kept_whole() {
        let text = "word ".repeat(20_000);
        let f = write_tmp(&format!("{}\n", serde_json::json!({"id": "long", "text": text})));
        assert_eq!(load_documents(f.path()).unwrap()["long"].text.len(), text.len());
    }

    #[test]
    fn pools_group_by_query() {
        let js = judgments(&[("q1", "a", 2), ("q2", "b", 0), ("q1", "c", 1), ("q1", "d", 0), ("q2", "e", 1)]);
        let pools = build_pools(&js).unwrap();
        assert_eq!(pools.len(), 2);
        assert_eq!(pools[0].candidates.len(), 3);
        assert_eq!(pools[1].candidates.len(), 2);
        let dup = judgments(&[("q1", "a", 2), ("q1", "a", 1)]);
        assert!(matches!(build_pools(&dup), Err(CorpusError::DuplicateJudgment { .. })));
    }

    fn synthetic_pools(n_queries: usize, per_query: usize) -> Vec<CandidatePool> {
        (0..n_queries)
            .map(|q| CandidatePool {
                query_id: format!("q{q:03}"),
                candidates: (0..per_query).map(|d| (format!("q{q:03}-d{d}"), (d % 3) as u8)).collect(),
            })
            .collect()
    }

    #[test]
    fn split_is_byte_identical_for_same_seed() {
        let pools = synthetic_pools(10, 6);
        let cfg = SplitConfig::with_seed(42);
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_split(&split_dataset(&pools, &cfg).unwrap(), &mut a).unwrap();
        write_split(&split_dataset(&pools, &cfg).unwrap(), &mut b).unwrap();
        assert_eq!(a, b);
        let mut c = Vec::new();
        write_split(&split_dataset(&pools, &SplitConfig::with_seed(43)).unwrap(), &mut c).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn split_round_trips_through_jsonl() {
        let split = split_dataset(&synthetic_pools(12, 5), &SplitConfig::with_seed(7)).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        save_split(&split, f.path()).unwrap();
        assert_eq!(load_split(f.path()).unwrap(), split);
    }

    #[test]
    fn split_rejects_bad_config() {
        let pools = synthetic_pools(3, 3);
        let cfg = SplitConfig { pure_test_fraction: 1.0, ..SplitConfig::default() };
        assert!(matches!(split_dataset(&pools, &cfg), Err(CorpusError::InvalidSplitConfig(_))));
        assert!(matches!(split_dataset(&[], &SplitConfig::default()), Err(CorpusError::InvalidSplitConfig(_))));
    }

    #[test]
    fn split_errors_when_no_query_can_train() {
        // two queries, one goes to pure test, the other has a single candidate
        let pools = vec![
            CandidatePool { query_id: "a".into(), candidates: vec![("x".into(), 1)] },
            CandidatePool { query_id: "b".into(), candidates: vec![("y".into(), 1)] },
        ];
        assert!(matches!(
            split_dataset(&pools, &SplitConfig::with_seed(1)),
            Err(CorpusError::InsufficientPairs(_))
        ));
    }

    #[test]
    fn shared_documents_are_removed_from_test() {
        // every query judges the same documents, so any training doc collides
        let pools: Vec<CandidatePool> = (0..5)
            .map(|q| CandidatePool {
                query_id: format!("q{q}"),
                candidates: (0..4).map(|d| (format!("d{d}"), (d % 3) as u8)).collect(),
            })
            .collect();
        let split = split_dataset(&pools, &SplitConfig::with_seed(3)).unwrap();
        let train = split.train_doc_ids();
        assert!(split.removed_for_disjointness > 0);
        for cands in split.test_lists.values() {
            assert!(cands.iter().all(|(d, _)| !train.contains(d.as_str())));
        }
    }

    #[test]
    fn pure_test_count_is_robust_to_float_error() {
        let cfg = SplitConfig::default();
        assert_eq!(cfg.pure_test_count(15), 3);
        assert_eq!(cfg.pure_test_count(200), 40);
        assert_eq!(cfg.pure_test_count(75), 15);
        assert_eq!(cfg.pure_test_count(11), 3);
    }
}
