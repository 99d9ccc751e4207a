//! Dataset generation: select judged queries, filter their candidate
//! pools, rerank them, and package the ranked lists with a manifest that
//! pins every setting the output depends on.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CandidatePool, Document, DocumentMap};
use crate::gateway::{fan_out, Gateway, LedgerSummary};
use crate::metrics::{assign_competition_ranks, RankedEntry, Ranking};
use crate::rerank::{PromptTemplates, RerankMethod, RerankResult, Reranker};
use crate::sha256_hex;
use crate::tuner::{Signal, SignalRule};

pub const DATASET_FORMAT: &str = "qbd-dataset";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid filter: {0}")]
    InvalidFilter(String),
    #[error("truncation length t must be >= 1")]
    InvalidTruncation,
    #[error("no query passes the filter")]
    NothingPassesFilter,
    #[error("document {0} is not in the corpus")]
    UnknownDocument(String),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("unsupported dataset {format} version {version}")]
    VersionMismatch { format: String, version: u32 },
    #[error("schema violation at record {record} (byte offset {offset}): {reason}")]
    Schema { record: usize, offset: usize, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, PipelineError>;

/// Decides whether a query and its candidate pool form a usable data point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub min_candidates: usize,
    pub max_candidates: usize,
    pub require_grade_diversity: bool,
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self { min_candidates: 2, max_candidates: 30, require_grade_diversity: false }
    }
}

impl FilterSpec {
    pub fn validate(&self) -> Result<()> {
        if self.min_candidates == 0 || self.min_candidates > self.max_candidates {
            return Err(PipelineError::InvalidFilter(format!(
                "need 1 <= min ({}) <= max ({})",
                self.min_candidates, self.max_candidates
            )));
        }
        Ok(())
    }

    pub fn accepts_counts(&self, candidates: usize, distinct_grades: usize) -> bool {
        (self.min_candidates..=self.max_candidates).contains(&candidates)
            && (!self.require_grade_diversity || distinct_grades >= 2)
    }
}

fn distinct_grades(candidates: &[(String, u8)]) -> usize {
    candidates.iter().map(|(_, g)| *g).collect::<BTreeSet<_>>().len()
}

pub fn apply_filter(pool: &CandidatePool, spec: &FilterSpec) -> bool {
    spec.accepts_counts(pool.candidates.len(), distinct_grades(&pool.candidates))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleStatus {
    #[default]
    Unreviewed,
    Accepted,
    Corrected,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub query_id: String,
    pub method: RerankMethod,
    /// Id of the rerank result the record came from.
    pub result_id: String,
    pub entries: Vec<RankedEntry>,
    /// Judged pool size and number of distinct grades, kept so the filter
    /// can be re-checked after the fact.
    pub pool_size: usize,
    pub distinct_grades: usize,
    pub oracle_status: OracleStatus,
    /// Candidates whose replies could not be scored.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unscored: Vec<String>,
}

impl DatasetRecord {
    pub fn ranking(&self) -> Ranking {
        Ranking { query_id: self.query_id.clone(), entries: self.entries.clone() }
    }
}

/// Rebuilds entries for a human-corrected order: the i-th position takes
/// the i-th best of the proposed scores, and ranks are recomputed from
/// those scores.
pub fn reorder_entries(proposed: &[RankedEntry], order: &[String]) -> Vec<RankedEntry> {
    let mut scores: Vec<f64> = proposed.iter().map(|e| e.score).collect();
    scores.sort_by(|a, b| b.total_cmp(a));
    let ranks = assign_competition_ranks(&scores).unwrap_or_else(|_| (1..=scores.len() as u32).collect());
    order
        .iter()
        .zip(scores.iter().zip(ranks))
        .map(|(doc_id, (score, rank))| RankedEntry { doc_id: doc_id.clone(), score: *score, rank })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryFailure {
    pub query_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub method: RerankMethod,
    pub t: usize,
    pub filter: FilterSpec,
    pub templates_sha256: String,
    pub model: String,
    pub config_hash: String,
    pub ledger: LedgerSummary,
    #[serde(default)]
    pub failures: Vec<QueryFailure>,
    #[serde(default)]
    pub filtered_out: Vec<String>,
    pub record_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedDataset {
    pub manifest: Manifest,
    pub records: Vec<DatasetRecord>,
}

/// Settings that determine a generation run's output.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerateConfig {
    pub method: RerankMethod,
    pub filter: FilterSpec,
    pub t: usize,
    pub seed: u64,
}

impl GenerateConfig {
    pub fn new(method: RerankMethod) -> Self {
        Self { method, filter: FilterSpec::default(), t: FilterSpec::default().max_candidates, seed: 0 }
    }
}

/// Hash over everything that changes generated output: method and
/// instructions, prompt templates, model, seed, filter and `t`.
pub fn config_hash(config: &GenerateConfig, templates: &PromptTemplates, model: &str) -> String {
    let material = serde_json::json!({
        "method": config.method,
        "templates": templates.fingerprint(),
        "model": model,
        "seed": config.seed,
        "filter": config.filter,
        "t": config.t,
    });
    sha256_hex(material.to_string().as_bytes())
}

/// Generated dataset plus the full rerank results behind its records.
#[derive(Debug, Clone)]
pub struct Generation {
    pub dataset: GeneratedDataset,
    pub results: Vec<RerankResult>,
}

fn lookup<'a>(documents: &'a DocumentMap, id: &str) -> Result<&'a Document> {
    documents.get(id).ok_or_else(|| PipelineError::UnknownDocument(id.to_string()))
}

/// Reranks every judged query whose pool passes the filter. Queries are
/// processed concurrently and assembled in query-id order; a query whose
/// reranking fails is listed in the manifest instead of aborting the run.
pub fn generate(
    documents: &DocumentMap,
    pools: &[CandidatePool],
    config: &GenerateConfig,
    gateway: &Gateway,
    templates: &PromptTemplates,
) -> Result<Generation> {
    config.filter.validate()?;
    if config.t == 0 {
        return Err(PipelineError::InvalidTruncation);
    }
    config.method.validate().map_err(|e| PipelineError::InvalidDataset(e.to_string()))?;
    let mut selected: Vec<&CandidatePool> = pools.iter().collect();
    selected.sort_by(|a, b| a.query_id.cmp(&b.query_id));
    let (passing, rejected): (Vec<&CandidatePool>, Vec<&CandidatePool>) =
        selected.into_iter().partition(|p| apply_filter(p, &config.filter));
    if passing.is_empty() {
        return Err(PipelineError::NothingPassesFilter);
    }
    let inputs = passing
        .iter()
        .map(|p| {
            let query = lookup(documents, &p.query_id)?;
            let candidates = p.candidates.iter().map(|(d, _)| lookup(documents, d)).collect::<Result<Vec<_>>>()?;
            Ok((*p, query, candidates))
        })
        .collect::<Result<Vec<_>>>()?;

    let reranker = Reranker::new(gateway, templates).with_max_candidates(config.filter.max_candidates);
    let outcomes = fan_out(&inputs, gateway.parallelism(), |(_, query, candidates)| {
        reranker.rerank(query, candidates, &config.method)
    });

    let mut records = Vec::new();
    let mut results = Vec::new();
    let mut failures = Vec::new();
    for ((pool, _, _), outcome) in inputs.iter().zip(outcomes) {
        match outcome {
            Ok(result) => {
                let mut ranking = result.ranking.clone();
                ranking.truncate(config.t);
                records.push(DatasetRecord {
                    query_id: pool.query_id.clone(),
                    method: config.method.clone(),
                    result_id: result.result_id.clone(),
                    entries: ranking.entries,
                    pool_size: pool.candidates.len(),
                    distinct_grades: distinct_grades(&pool.candidates),
                    oracle_status: OracleStatus::Unreviewed,
                    unscored: result.failures.iter().map(|f| f.doc_id.clone()).collect(),
                });
                results.push(result);
            }
            Err(e) => {
                log::warn!("query {}: {e}", pool.query_id);
                failures.push(QueryFailure { query_id: pool.query_id.clone(), error: e.to_string() });
            }
        }
    }
    let manifest = Manifest {
        format: DATASET_FORMAT.into(),
        version: DATASET_VERSION,
        seed: config.seed,
        method: config.method.clone(),
        t: config.t,
        filter: config.filter,
        templates_sha256: templates.fingerprint(),
        model: gateway.config().model.clone(),
        config_hash: config_hash(config, templates, &gateway.config().model),
        ledger: gateway.ledger().summary(),
        failures,
        filtered_out: rejected.iter().map(|p| p.query_id.clone()).collect(),
        record_count: records.len(),
    };
    Ok(Generation { dataset: GeneratedDataset { manifest, records }, results })
}

impl GeneratedDataset {
    /// Checks the record invariants: at most `t` entries, a passing
    /// filter, unique query ids and a matching record count.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PipelineError::InvalidDataset(m));
        if self.manifest.record_count != self.records.len() {
            return bad(format!(
                "manifest lists {} records, found {}",
                self.manifest.record_count,
                self.records.len()
            ));
        }
        let mut seen = BTreeSet::new();
        for r in &self.records {
            if !seen.insert(r.query_id.as_str()) {
                return bad(format!("query {} appears twice", r.query_id));
            }
            if r.entries.len() > self.manifest.t {
                return bad(format!("query {} has {} entries, more than t = {}", r.query_id, r.entries.len(), self.manifest.t));
            }
            if !self.manifest.filter.accepts_counts(r.pool_size, r.distinct_grades) {
                return bad(format!("query {} does not pass the filter", r.query_id));
            }
        }
        Ok(())
    }

    /// Records usable as a training signal: everything except rejected ones.
    pub fn training_records(&self) -> impl Iterator<Item = &DatasetRecord> {
        self.records.iter().filter(|r| r.oracle_status != OracleStatus::Rejected)
    }

    /// Training signal with the relevance rule matching the method family.
    pub fn to_signal(&self, score_cutoff: f64) -> Signal {
        let rule = if self.manifest.method.is_pairwise() {
            SignalRule::PositiveTotal
        } else {
            SignalRule::ScoreCutoff { cutoff: score_cutoff }
        };
        let lists: BTreeMap<String, Vec<(String, f64)>> = self
            .training_records()
            .map(|r| (r.query_id.clone(), r.entries.iter().map(|e| (e.doc_id.clone(), e.score)).collect()))
            .collect();
        Signal { provenance: self.manifest.method.name().to_string(), rule, lists }
    }
}

fn write_line<W: Write, T: Serialize>(out: &mut W, value: &T) -> std::io::Result<()> {
    serde_json::to_writer(&mut *out, value)?;
    out.write_all(b"\n")
}

pub fn write_dataset<W: Write>(dataset: &GeneratedDataset, mut out: W) -> Result<()> {
    dataset.validate()?;
    let io = |source| PipelineError::Io { path: "<output>".into(), source };
    write_line(&mut out, &dataset.manifest).map_err(io)?;
    for r in &dataset.records {
        write_line(&mut out, r).map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn read_dataset<R: BufRead>(mut input: R) -> Result<GeneratedDataset> {
    let mut offset = 0usize;
    let mut buf = String::new();
    let mut manifest: Option<Manifest> = None;
    let mut records = Vec::new();
    loop {
        buf.clear();
        let n = input
            .read_line(&mut buf)
            .map_err(|source| PipelineError::Io { path: "<input>".into(), source })?;
        if n == 0 {
            break;
        }
        let start = offset;
        offset += n;
        if buf.trim().is_empty() {
            continue;
        }
        match &manifest {
            None => {
                let head: serde_json::Value = serde_json::from_str(&buf).map_err(|e| PipelineError::Schema {
                    record: 0,
                    offset: start,
                    reason: format!("manifest: {e}"),
                })?;
                let format = head["format"].as_str().unwrap_or_default().to_string();
                let version = head["version"].as_u64().unwrap_or(0) as u32;
                if format != DATASET_FORMAT || version != DATASET_VERSION {
                    return Err(PipelineError::VersionMismatch { format, version });
                }
                manifest = Some(serde_json::from_value(head).map_err(|e| PipelineError::Schema {
                    record: 0,
                    offset: start,
                    reason: format!("manifest: {e}"),
                })?);
            }
            Some(_) => {
                let record = serde_json::from_str(&buf).map_err(|e| PipelineError::Schema {
                    record: records.len() + 1,
                    offset: start,
                    reason: e.to_string(),
                })?;
                records.push(record);
            }
        }
    }
    let manifest = manifest.ok_or(PipelineError::Schema { record: 0, offset: 0, reason: "missing manifest".into() })?;
    if manifest.record_count != records.len() {
        return Err(PipelineError::Schema {
            record: records.len() + 1,
            offset,
            reason: format!("expected {} records, file ends after {}", manifest.record_count, records.len()),
        });
    }
    let dataset = GeneratedDataset { manifest, records };
    dataset.validate()?;
    Ok(dataset)
}

pub fn export_dataset(dataset: &GeneratedDataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)
        .map_err(|source| PipelineError::Io { path: path.display().to_string(), source })?;
    write_dataset(dataset, std::io::BufWriter::new(file))
}

pub fn import_dataset(path: &Path) -> Result<GeneratedDataset> {
    let file =
        std::fs::File::open(path).map_err(|source| PipelineError::Io { path: path.display().to_string(), source })?;
    read_dataset(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{GatewayConfig, GatewayError, GradeOracle, StubBackend};
    use crate::metrics::kendall_tau_b;
    use crate::rerank::MethodKind;

    struct Fixture {
        documents: DocumentMap,
        pools: Vec<CandidatePool>,
        oracle: GradeOracle,
    }

    fn fixture(n_queries: usize, n_candidates: usize) -> Fixture {
        let mut documents = DocumentMap::new();
        let mut pools = Vec::new();
        let mut known = Vec::new();
        for q in 0..n_queries {
            let qid = format!("q{q:02}");
            documents.insert(qid.clone(), Document::new(&qid, format!("query text {qid}")));
            let mut candidates = Vec::new();
            for c in 0..n_candidates {
                let did = format!("{qid}-d{c}");
                let text = format!("candidate body {did} marker");
                let grade = (c % 3) as u8;
                known.push((text.clone(), f64::from(grade) + c as f64 * 0.01));
                documents.insert(did.clone(), Document::new(&did, text));
                candidates.push((did, grade));
            }
            pools.push(CandidatePool { query_id: qid, candidates });
        }
        Fixture { documents, pools, oracle: GradeOracle::new(known) }
    }

    fn gateway(backend: StubBackend) -> Gateway {
        Gateway::stub(GatewayConfig { parallelism: 4, ..Default::default() }, backend).unwrap()
    }

    #[test]
    fn filter_examples() {
        let pool = |n: usize| CandidatePool {
            query_id: "q".into(),
            candidates: (0..n).map(|i| (format!("d{i}"), (i % 2) as u8)).collect(),
        };
        let spec = FilterSpec::default();
        assert!(!apply_filter(&pool(1), &spec));
        assert!(apply_filter(&pool(5), &FilterSpec { max_candidates: 10, ..spec }));
        assert!(!apply_filter(&pool(40), &spec));
        let same = CandidatePool { query_id: "q".into(), candidates: vec![("a".into(), 1), ("b".into(), 1)] };
        assert!(apply_filter(&same, &spec));
        assert!(!apply_filter(&same, &FilterSpec { require_grade_diversity: true, ..spec }));
        assert!(FilterSpec { min_candidates: 0, ..spec }.validate().is_err());
        assert!(FilterSpec { min_candidates: 5, max_candidates: 4, ..spec }.validate().is_err());
    }

    #[test]
    fn oracle_generation_reproduces_truth() {
        let f = fixture(4, 5);
        let g = gateway(StubBackend::new().with_fallback(f.oracle.clone()));
        let t = PromptTemplates::default();
        let cfg = GenerateConfig::new(RerankMethod::new(MethodKind::PcsLlm));
        let out = generate(&f.documents, &f.pools, &cfg, &g, &t).unwrap();
        assert_eq!(out.dataset.records.len(), 4);
        for (rec, pool) in out.dataset.records.iter().zip(&f.pools) {
            let grade: BTreeMap<&str, f64> = pool.candidates.iter().map(|(d, g)| (d.as_str(), f64::from(*g))).collect();
            let predicted: Vec<f64> = rec.entries.iter().map(|e| -f64::from(e.rank)).collect();
            let truth: Vec<f64> = rec.entries.iter().map(|e| grade[e.doc_id.as_str()]).collect();
            // oracle values break grade ties by position, so compare orders
            let tau = kendall_tau_b(&predicted, &truth).unwrap();
            assert!(tau > 0.0);
            assert!(rec.entries.windows(2).all(|w| grade[w[0].doc_id.as_str()] >= grade[w[1].doc_id.as_str()]));
        }
        assert_eq!(out.dataset.manifest.ledger.chat.requests, 4 * 20);
    }

    #[test]
    fn truncation_to_t() {
        let f = fixture(3, 5);
        let g = gateway(StubBackend::new().with_fallback(f.oracle.clone()));
        let t = PromptTemplates::default();
        let cfg = GenerateConfig { t: 2, ..GenerateConfig::new(RerankMethod::new(MethodKind::ScsLlm)) };
        let out = generate(&f.documents, &f.pools, &cfg, &g, &t).unwrap();
        assert!(out.dataset.records.iter().all(|r| r.entries.len() == 2));
        assert!(out.results.iter().all(|r| r.ranking.len() == 5));
    }

    #[test]
    fn failing_query_is_listed_not_fatal() {
        let f = fixture(3, 3);
        let oracle = f.oracle.clone();
        let g = gateway(StubBackend::new().with_fallback(move |p: &str| {
            if p.contains("q01") {
                Err(GatewayError::Http { status: 500, body: "down".into() })
            } else {
                crate::gateway::Responder::respond(&oracle, p)
            }
        }));
        let t = PromptTemplates::default();
        let cfg = GenerateConfig::new(RerankMethod::new(MethodKind::PcsLlm));
        let out = generate(&f.documents, &f.pools, &cfg, &g, &t).unwrap();
        let ids: Vec<&str> = out.dataset.records.iter().map(|r| r.query_id.as_str()).collect();
        assert_eq!(ids, vec!["q00", "q02"]);
        assert_eq!(out.dataset.manifest.failures.len(), 1);
        assert_eq!(out.dataset.manifest.failures[0].query_id, "q01");
    }

    #[test]
    fn nothing_passing_is_an_error() {
        let f = fixture(2, 1);
        let g = gateway(StubBackend::new());
        let cfg = GenerateConfig::new(RerankMethod::new(MethodKind::PcsLlm));
        assert!(matches!(
            generate(&f.documents, &f.pools, &cfg, &g, &PromptTemplates::default()),
            Err(PipelineError::NothingPassesFilter)
        ));
        let cfg = GenerateConfig { t: 0, ..cfg };
        assert!(matches!(
            generate(&f.documents, &f.pools, &cfg, &g, &PromptTemplates::default()),
            Err(PipelineError::InvalidTruncation)
        ));
    }

    #[test]
    fn generation_is_idempotent_under_stub() {
        let f = fixture(3, 4);
        let t = PromptTemplates::default();
        let cfg = GenerateConfig::new(RerankMethod::new(MethodKind::ScsLlm));
        let run = || {
            let g = gateway(StubBackend::new().with_fallback(f.oracle.clone()));
            generate(&f.documents, &f.pools, &cfg, &g, &t).unwrap().dataset
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn config_hash_tracks_settings() {
        let t = PromptTemplates::default();
        let base = GenerateConfig::new(RerankMethod::new(MethodKind::PcsLlm));
        let h = config_hash(&base, &t, "m");
        assert_eq!(h, config_hash(&base.clone(), &t, "m"));
        let variants = [
            GenerateConfig { seed: 1, ..base.clone() },
            GenerateConfig { t: 3, ..base.clone() },
            GenerateConfig { filter: FilterSpec { min_candidates: 3, ..base.filter }, ..base.clone() },
            GenerateConfig { method: RerankMethod::new(MethodKind::ScsLlm), ..base.clone() },
            GenerateConfig { method: base.method.clone().with_instructions("x", Some(1)).unwrap(), ..base.clone() },
        ];
        for v in &variants {
            assert_ne!(config_hash(v, &t, "m"), h);
        }
        let other = PromptTemplates::from_sources("{{query}} {{candidate}}", t.pairwise.source()).unwrap();
        assert_ne!(config_hash(&base, &other, "m"), h);
    }

    fn small_dataset() -> GeneratedDataset {
        let f = fixture(3, 4);
        let g = gateway(StubBackend::new().with_fallback(f.oracle.clone()));
        let cfg = GenerateConfig::new(RerankMethod::new(MethodKind::PcsLlm).with_instructions("same phase", Some(2)).unwrap());
        let mut d = generate(&f.documents, &f.pools, &cfg, &g, &PromptTemplates::default()).unwrap().dataset;
        d.records[1].oracle_status = OracleStatus::Accepted;
        d.records[2].oracle_status = OracleStatus::Rejected;
        d
    }

    #[test]
    fn export_import_round_trip() {
        let d = small_dataset();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.jsonl");
        export_dataset(&d, &path).unwrap();
        assert_eq!(import_dataset(&path).unwrap(), d);

        let mut empty = d.clone();
        empty.records.clear();
        empty.manifest.record_count = 0;
        let mut buf = Vec::new();
        write_dataset(&empty, &mut buf).unwrap();
        assert_eq!(buf.iter().filter(|b| **b == b'\n').count(), 1);
        assert_eq!(read_dataset(buf.as_slice()).unwrap(), empty);
    }

    #[test]
    fn truncated_file_names_offset() {
        let d = small_dataset();
        let mut buf = Vec::new();
        write_dataset(&d, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let last_start = text.trim_end().rfind('\n').unwrap() + 1;
        let cut = &text[..last_start + 20];
        match read_dataset(cut.as_bytes()) {
            Err(PipelineError::Schema { record, offset, .. }) => {
                assert_eq!(record, 3);
                assert_eq!(offset, last_start);
            }
            other => panic!("unexpected {other:?}"),
        }
        let whole_lines = &text[..last_start];
        assert!(matches!(read_dataset(whole_lines.as_bytes()), Err(PipelineError::Schema { record: 3, .. })));
        let wrong = text.replacen("\"version\":1", "\"version\":9", 1);
        assert!(matches!(read_dataset(wrong.as_bytes()), Err(PipelineError::VersionMismatch { version: 9, .. })));
    }

    #[test]
    fn signal_skips_rejected_records() {
        let d = small_dataset();
        let s = d.to_signal(0.5);
        assert_eq!(s.rule, SignalRule::PositiveTotal);
        assert_eq!(s.provenance, "pcs_instr");
        assert_eq!(s.lists.len(), 2);
        assert!(!s.lists.contains_key(&d.records[2].query_id));
    }

    #[test]
    fn reorder_keeps_score_distribution() {
        let proposed = vec![
            RankedEntry { doc_id: "a".into(), score: 4.0, rank: 1 },
            RankedEntry { doc_id: "b".into(), score: 0.0, rank: 2 },
            RankedEntry { doc_id: "c".into(), score: -4.0, rank: 3 },
        ];
        let order: Vec<String> = ["b", "a", "c"].iter().map(|s| s.to_string()).collect();
        let out = reorder_entries(&proposed, &order);
        let got: Vec<(&str, f64, u32)> = out.iter().map(|e| (e.doc_id.as_str(), e.score, e.rank)).collect();
        assert_eq!(got, vec![("b", 4.0, 1), ("a", 0.0, 2), ("c", -4.0, 3)]);
    }
}
