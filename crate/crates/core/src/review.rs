//! Review queue for reranking output.
//!
//! Every change is an event appended to `log.jsonl` in the store
//! directory; `snapshot.json` periodically captures the folded state so
//! opening a large store does not replay from scratch. Mutations are
//! serialized through the log writer and guarded by optimistic
//! concurrency on each item's revision.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::DocumentMap;
use crate::gateway::LedgerSummary;
use crate::metrics::{RankedEntry, Ranking};
use crate::pipeline::{
    reorder_entries, DatasetRecord, FilterSpec, GeneratedDataset, Generation, Manifest, OracleStatus,
    DATASET_FORMAT, DATASET_VERSION,
};
use crate::rerank::{aggregate_pair_verdicts, PairVerdict, RerankMethod, RerankResult};

pub const LOG_FILE: &str = "log.jsonl";
pub const SNAPSHOT_FILE: &str = "snapshot.json";
pub const DEFAULT_SNAPSHOT_EVERY: u64 = 64;

#[derive(Debug, Error)]
pub enum ReviewError {
    #[error("no item {0}")]
    NotFound(String),
    #[error("item {id} is at revision {current}, not {expected}")]
    Conflict { id: String, expected: u64, current: u64 },
    #[error("instructions are at version {current}, not {expected}")]
    InstructionsConflict { expected: u64, current: u64 },
    #[error("invalid correction: {0}")]
    InvalidPermutation(String),
    #[error("pair ({a}, {b}) is not part of this item")]
    UnknownPair { a: String, b: String },
    #[error("item {0} was not ranked pairwise")]
    NotPairwise(String),
    #[error("verdict {0} is outside -1..=1")]
    InvalidVerdict(i8),
    #[error("instructions text is empty")]
    EmptyInstructions,
    #[error("nothing to export in the requested statuses")]
    NothingToExport,
    #[error("items come from different generation runs")]
    MixedOrigins,
    #[error("document {0} is not in the corpus")]
    UnknownDocument(String),
    #[error("{path}:{line}: {reason}")]
    Corrupt { path: PathBuf, line: usize, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, ReviewError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewStatus {
    Pending,
    Accepted,
    Corrected,
    Rejected,
}

impl std::str::FromStr for ReviewStatus {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "pending" => Ok(Self::Pending),
            "accepted" => Ok(Self::Accepted),
            "corrected" => Ok(Self::Corrected),
            "rejected" => Ok(Self::Rejected),
            other => Err(format!("unknown status `{other}`")),
        }
    }
}

/// Settings of the generation run an item came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemOrigin {
    pub seed: u64,
    pub t: usize,
    pub filter: FilterSpec,
    pub config_hash: String,
    pub templates_sha256: String,
    pub model: String,
}

impl ItemOrigin {
    pub fn from_manifest(m: &Manifest) -> Self {
        Self {
            seed: m.seed,
            t: m.t,
            filter: m.filter,
            config_hash: m.config_hash.clone(),
            templates_sha256: m.templates_sha256.clone(),
            model: m.model.clone(),
        }
    }

    /// Origin for results reranked outside a generation run.
    pub fn adhoc(t: usize) -> Self {
        Self {
            seed: 0,
            t,
            filter: FilterSpec { min_candidates: 1, max_candidates: usize::MAX, require_grade_diversity: false },
            config_hash: String::new(),
            templates_sha256: String::new(),
            model: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateView {
    pub doc_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairOverride {
    pub verdict: i8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub id: String,
    pub revision: u64,
    pub status: ReviewStatus,
    pub query_id: String,
    pub query_text: String,
    pub method: RerankMethod,
    pub candidates: Vec<CandidateView>,
    /// Full model ranking, before truncation.
    pub proposed: Vec<RankedEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub verdicts: Vec<PairVerdict>,
    /// Human verdicts keyed `"a\u{1f}b"` for the ordered pair (a, b).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub pair_overrides: BTreeMap<String, i8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corrected: Option<Vec<RankedEntry>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reject_reason: Option<String>,
    pub origin: ItemOrigin,
    pub pool_size: usize,
    pub distinct_grades: usize,
}

fn pair_key(a: &str, b: &str) -> String {
    format!("{a}\u{1f}{b}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ReviewAction {
    Accept,
    Reject {
        #[serde(default)]
        reason: Option<String>,
    },
    /// Replace the ranking with `order`, best first.
    Correct { order: Vec<String> },
    /// Human verdict on the pair; `verdict` is +1 when `a` is the better match.
    CorrectPair { a: String, b: String, verdict: i8 },
}

impl ReviewItem {
    fn proposed_ids(&self) -> Vec<&str> {
        self.proposed.iter().map(|e| e.doc_id.as_str()).collect()
    }

    /// Raw verdicts with every human override substituted for both orders
    /// of its pair.
    pub fn effective_verdicts(&self) -> Vec<PairVerdict> {
        let mut out: Vec<PairVerdict> = self
            .verdicts
            .iter()
            .filter(|v| {
                !self.pair_overrides.contains_key(&pair_key(&v.doc_first, &v.doc_second))
                    && !self.pair_overrides.contains_key(&pair_key(&v.doc_second, &v.doc_first))
            })
            .cloned()
            .collect();
        for (key, verdict) in &self.pair_overrides {
            let (a, b) = key.split_once('\u{1f}').expect("override keys hold two ids");
            let mut first = PairVerdict::new(a, b, *verdict);
            first.explanation = Some("reviewer override".into());
            let mut second = PairVerdict::new(b, a, -verdict);
            second.explanation = Some("reviewer override".into());
            out.push(first);
            out.push(second);
        }
        out
    }

    /// The ranking this item stands for under its current status.
    pub fn final_entries(&self) -> &[RankedEntry] {
        self.corrected.as_deref().unwrap_or(&self.proposed)
    }

    /// Applies `action` and returns the next state; `self` is untouched.
    pub fn apply(&self, action: &ReviewAction) -> Result<ReviewItem> {
        let mut next = self.clone();
        match action {
            ReviewAction::Accept => {
                next.status = ReviewStatus::Accepted;
                next.corrected = None;
                next.reject_reason = None;
                next.pair_overrides.clear();
            }
            ReviewAction::Reject { reason } => {
                next.status = ReviewStatus::Rejected;
                next.corrected = None;
                next.reject_reason = reason.clone();
                next.pair_overrides.clear();
            }
            ReviewAction::Correct { order } => {
                let expected: BTreeSet<&str> = self.proposed_ids().into_iter().collect();
                let given: BTreeSet<&str> = order.iter().map(String::as_str).collect();
                if given.len() != order.len() {
                    return Err(ReviewError::InvalidPermutation("order repeats a candidate".into()));
                }
                if given != expected {
                    let extra: Vec<&&str> = given.difference(&expected).collect();
                    let missing: Vec<&&str> = expected.difference(&given).collect();
                    return Err(ReviewError::InvalidPermutation(format!(
                        "unknown {extra:?}, missing {missing:?}"
                    )));
                }
                next.status = ReviewStatus::Corrected;
                next.corrected = Some(reorder_entries(&self.proposed, order));
                next.reject_reason = None;
                next.pair_overrides.clear();
            }
            ReviewAction::CorrectPair { a, b, verdict } => {
                if !self.method.is_pairwise() {
                    return Err(ReviewError::NotPairwise(self.id.clone()));
                }
                if !(-1..=1).contains(verdict) {
                    return Err(ReviewError::InvalidVerdict(*verdict));
                }
                let known = self.verdicts.iter().any(|v| {
                    (v.doc_first == *a && v.doc_second == *b) || (v.doc_first == *b && v.doc_second == *a)
                });
                if a == b || !known {
                    return Err(ReviewError::UnknownPair { a: a.clone(), b: b.clone() });
                }
                next.pair_overrides.remove(&pair_key(b, a));
                next.pair_overrides.insert(pair_key(a, b), *verdict);
                let ids = self.proposed_ids();
                let totals = aggregate_pair_verdicts(&ids, &next.effective_verdicts())
                    .map_err(|e| ReviewError::InvalidPermutation(e.to_string()))?;
                let ranking = Ranking::from_scores(
                    &self.query_id,
                    totals.into_iter().map(|(d, t)| (d, t as f64)).collect(),
                )
                .map_err(|e| ReviewError::InvalidPermutation(e.to_string()))?;
                next.status = ReviewStatus::Corrected;
                next.corrected = Some(ranking.entries);
                next.reject_reason = None;
            }
        }
        next.revision += 1;
        Ok(next)
    }
}

/// Versioned matching instructions fed into the `_instr` prompts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionsDoc {
    pub text: String,
    pub version: u64,
    pub updated_at: DateTime<Utc>,
}

impl Default for InstructionsDoc {
    fn default() -> Self {
        Self { text: String::new(), version: 0, updated_at: DateTime::<Utc>::UNIX_EPOCH }
    }
}

/// One rerank result plus what the reviewer needs to see it.
#[derive(Debug, Clone, PartialEq)]
pub struct ReviewInput {
    pub result: RerankResult,
    pub query_text: String,
    pub candidate_texts: BTreeMap<String, String>,
    pub origin: ItemOrigin,
    pub pool_size: usize,
    pub distinct_grades: usize,
}

impl ReviewInput {
    pub fn from_result(result: RerankResult, documents: &DocumentMap, origin: ItemOrigin) -> Result<Self> {
        let text = |id: &str| {
            documents.get(id).map(|d| d.text.clone()).ok_or_else(|| ReviewError::UnknownDocument(id.to_string()))
        };
        let mut candidate_texts = BTreeMap::new();
        for id in result.ranking.doc_ids().into_iter().chain(result.failures.iter().map(|f| f.doc_id.as_str())) {
            candidate_texts.insert(id.to_string(), text(id)?);
        }
        Ok(Self {
            query_text: text(&result.query_id)?,
            pool_size: candidate_texts.len(),
            distinct_grades: 0,
            candidate_texts,
            origin,
            result,
        })
    }

    /// Inputs for every record of a generation run.
    pub fn from_generation(generation: &Generation, documents: &DocumentMap) -> Result<Vec<Self>> {
        let origin = ItemOrigin::from_manifest(&generation.dataset.manifest);
        let records: BTreeMap<&str, &DatasetRecord> =
            generation.dataset.records.iter().map(|r| (r.result_id.as_str(), r)).collect();
        generation
            .results
            .iter()
            .map(|result| {
                let mut input = Self::from_result(result.clone(), documents, origin.clone())?;
                if let Some(rec) = records.get(result.result_id.as_str()) {
                    input.pool_size = rec.pool_size;
                    input.distinct_grades = rec.distinct_grades;
                }
                Ok(input)
            })
            .collect()
    }

    fn into_item(self) -> ReviewItem {
        let r = self.result;
        let by_id: BTreeMap<&str, _> = r.scores.iter().map(|s| (s.doc_id.as_str(), s)).collect();
        let failures: BTreeMap<&str, _> = r.failures.iter().map(|f| (f.doc_id.as_str(), f)).collect();
        let candidates = self
            .candidate_texts
            .iter()
            .map(|(id, text)| CandidateView {
                doc_id: id.clone(),
                text: text.clone(),
                score: by_id.get(id.as_str()).map(|s| s.score),
                explanation: by_id
                    .get(id.as_str())
                    .and_then(|s| s.explanation.clone())
                    .or_else(|| failures.get(id.as_str()).map(|f| f.reason.clone())),
                warning: by_id.get(id.as_str()).and_then(|s| s.warning.clone()),
            })
            .collect();
        ReviewItem {
            id: r.result_id.clone(),
            revision: 0,
            status: ReviewStatus::Pending,
            query_id: r.query_id.clone(),
            query_text: self.query_text,
            method: r.method.clone(),
            candidates,
            proposed: r.ranking.entries.clone(),
            verdicts: r.verdicts.clone(),
            pair_overrides: BTreeMap::new(),
            corrected: None,
            reject_reason: None,
            origin: self.origin,
            pool_size: self.pool_size,
            distinct_grades: self.distinct_grades,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum Event {
    Enqueued { item: Box<ReviewItem> },
    Action { item_id: String, revision: u64, action: ReviewAction, at: DateTime<Utc> },
    Instructions { doc: InstructionsDoc },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StoreState {
    pub items: BTreeMap<String, ReviewItem>,
    pub instructions: InstructionsDoc,
}

impl StoreState {
    fn fold(&mut self, event: Event) -> std::result::Result<(), String> {
        match event {
            Event::Enqueued { item } => {
                self.items.entry(item.id.clone()).or_insert(*item);
            }
            Event::Action { item_id, revision, action, .. } => {
                let item = self.items.get(&item_id).ok_or_else(|| format!("action on unknown item {item_id}"))?;
                let next = item.apply(&action).map_err(|e| e.to_string())?;
                if next.revision != revision {
                    return Err(format!("item {item_id}: replay gives revision {}, log says {revision}", next.revision));
                }
                self.items.insert(item_id, next);
            }
            Event::Instructions { doc } => self.instructions = doc,
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    events: u64,
    state: StoreState,
}

struct LogWriter {
    file: File,
    events: u64,
}

pub struct ReviewStore {
    dir: PathBuf,
    state: RwLock<StoreState>,
    writer: Mutex<LogWriter>,
    snapshot_every: u64,
}

fn io_at(path: &Path) -> impl FnOnce(std::io::Error) -> ReviewError + '_ {
    move |source| ReviewError::Io { path: path.to_path_buf(), source }
}

/// Reads every complete event of a log. A torn final line (no trailing
/// newline, not parseable) is reported through the returned length so
/// the caller can cut it off.
fn read_log(path: &Path) -> Result<(Vec<Event>, u64)> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok((Vec::new(), 0)),
        Err(e) => return Err(io_at(path)(e)),
    };
    let mut reader = BufReader::new(file);
    let mut events = Vec::new();
    let mut good_len = 0u64;
    let mut line = String::new();
    let mut lineno = 0;
    loop {
        line.clear();
        let n = reader.read_line(&mut line).map_err(io_at(path))?;
        if n == 0 {
            break;
        }
        lineno += 1;
        if line.trim().is_empty() {
            good_len += n as u64;
            continue;
        }
        match serde_json::from_str::<Event>(&line) {
            Ok(ev) => {
                events.push(ev);
                good_len += n as u64;
            }
            Err(_) if !line.ends_with('\n') => {
                log::warn!("{}: dropping torn final line {lineno}", path.display());
                break;
            }
            Err(e) => {
                return Err(ReviewError::Corrupt { path: path.to_path_buf(), line: lineno, reason: e.to_string() })
            }
        }
    }
    Ok((events, good_len))
}

impl ReviewStore {
    pub fn open(dir: &Path) -> Result<Self> {
        Self::open_with(dir, DEFAULT_SNAPSHOT_EVERY)
    }

    pub fn open_with(dir: &Path, snapshot_every: u64) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(io_at(dir))?;
        let log_path = dir.join(LOG_FILE);
        let (events, good_len) = read_log(&log_path)?;
        let snap_path = dir.join(SNAPSHOT_FILE);
        let (mut state, skip) = match std::fs::read_to_string(&snap_path) {
            Ok(s) => {
                let snap: Snapshot = serde_json::from_str(&s).map_err(|e| ReviewError::Corrupt {
                    path: snap_path.clone(),
                    line: 1,
                    reason: e.to_string(),
                })?;
                if snap.events > events.len() as u64 {
                    log::warn!("snapshot is ahead of the log; rebuilding from the log");
                    (StoreState::default(), 0)
                } else {
                    (snap.state, snap.events)
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => (StoreState::default(), 0),
            Err(e) => return Err(io_at(&snap_path)(e)),
        };
        let total = events.len() as u64;
        for (i, ev) in events.into_iter().enumerate().skip(skip as usize) {
            state.fold(ev).map_err(|reason| ReviewError::Corrupt { path: log_path.clone(), line: i + 1, reason })?;
        }
        let file = OpenOptions::new().create(true).append(true).open(&log_path).map_err(io_at(&log_path))?;
        if file.metadata().map_err(io_at(&log_path))?.len() > good_len {
            file.set_len(good_len).map_err(io_at(&log_path))?;
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            state: RwLock::new(state),
            writer: Mutex::new(LogWriter { file, events: total }),
            snapshot_every: snapshot_every.max(1),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Number of events in the log; grows with every mutation.
    pub fn revision(&self) -> u64 {
        self.lock_writer().events
    }

    /// State rebuilt from the log alone, ignoring any snapshot.
    pub fn replay(dir: &Path) -> Result<StoreState> {
        let log_path = dir.join(LOG_FILE);
        let (events, _) = read_log(&log_path)?;
        let mut state = StoreState::default();
        for (i, ev) in events.into_iter().enumerate() {
            state.fold(ev).map_err(|reason| ReviewError::Corrupt { path: log_path.clone(), line: i + 1, reason })?;
        }
        Ok(state)
    }

    pub fn state(&self) -> StoreState {
        self.read().clone()
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, StoreState> {
        self.state.read().unwrap_or_else(|e| e.into_inner())
    }

    fn append(&self, writer: &mut LogWriter, events: &[Event]) -> Result<()> {
        let path = self.dir.join(LOG_FILE);
        let mut buf = Vec::new();
        for ev in events {
            serde_json::to_writer(&mut buf, ev).expect("events serialize");
            buf.push(b'\n');
        }
        writer.file.write_all(&buf).map_err(io_at(&path))?;
        writer.file.flush().map_err(io_at(&path))?;
        let before = writer.events;
        writer.events += events.len() as u64;
        if before / self.snapshot_every != writer.events / self.snapshot_every {
            self.write_snapshot(writer.events)?;
        }
        Ok(())
    }

    fn write_snapshot(&self, events: u64) -> Result<()> {
        let path = self.dir.join(SNAPSHOT_FILE);
        let tmp = self.dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        let snap = Snapshot { events, state: self.read().clone() };
        std::fs::write(&tmp, serde_json::to_vec(&snap).expect("snapshot serializes")).map_err(io_at(&tmp))?;
        std::fs::rename(&tmp, &path).map_err(io_at(&path))
    }

    fn lock_writer(&self) -> std::sync::MutexGuard<'_, LogWriter> {
        self.writer.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Adds results as pending items at revision 0. A result already in
    /// the store keeps its item; its id is returned again.
    pub fn enqueue(&self, inputs: Vec<ReviewInput>) -> Result<Vec<String>> {
        let mut writer = self.lock_writer();
        let mut ids = Vec::with_capacity(inputs.len());
        let mut fresh: Vec<ReviewItem> = Vec::new();
        {
            let state = self.read();
            for input in inputs {
                let id = input.result.result_id.clone();
                if !state.items.contains_key(&id) && !fresh.iter().any(|i| i.id == id) {
                    fresh.push(input.into_item());
                }
                ids.push(id);
            }
        }
        if fresh.is_empty() {
            return Ok(ids);
        }
        {
            let mut state = self.state.write().unwrap_or_else(|e| e.into_inner());
            for item in &fresh {
                state.items.insert(item.id.clone(), item.clone());
            }
        }
        let events: Vec<Event> = fresh.into_iter().map(|item| Event::Enqueued { item: Box::new(item) }).collect();
        self.append(&mut writer, &events)?;
        Ok(ids)
    }

    pub fn get(&self, id: &str) -> Result<ReviewItem> {
        self.read().items.get(id).cloned().ok_or_else(|| ReviewError::NotFound(id.to_string()))
    }

    /// Items in any of `statuses` (all items when empty), ordered by
    /// query id then item id.
    pub fn list(&self, statuses: &[ReviewStatus]) -> Vec<ReviewItem> {
        let mut items: Vec<ReviewItem> = self
            .read()
            .items
            .values()
            .filter(|i| statuses.is_empty() || statuses.contains(&i.status))
            .cloned()
            .collect();
        items.sort_by(|a, b| (&a.query_id, &a.id).cmp(&(&b.query_id, &b.id)));
        items
    }

    pub fn apply_action(&self, id: &str, expected_revision: u64, action: ReviewAction) -> Result<ReviewItem> {
        let mut writer = self.lock_writer();
        let current = self.get(id)?;
        if current.revision != expected_revision {
            return Err(ReviewError::Conflict {
                id: id.to_string(),
                expected: expected_revision,
                current: current.revision,
            });
        }
        let next = current.apply(&action)?;
        let event = Event::Action { item_id: id.to_string(), revision: next.revision, action, at: Utc::now() };
        self.state.write().unwrap_or_else(|e| e.into_inner()).items.insert(id.to_string(), next.clone());
        if let Err(e) = self.append(&mut writer, &[event]) {
            self.state.write().unwrap_or_else(|e| e.into_inner()).items.insert(id.to_string(), current);
            return Err(e);
        }
        Ok(next)
    }

    pub fn instructions(&self) -> InstructionsDoc {
        self.read().instructions.clone()
    }

    /// Replaces the instructions text, bumping the version by one. When
    /// `expected_version` is given it must match the current version.
    pub fn update_instructions(&self, text: &str, expected_version: Option<u64>) -> Result<InstructionsDoc> {
        if text.trim().is_empty() {
            return Err(ReviewError::EmptyInstructions);
        }
        let mut writer = self.lock_writer();
        let current = self.instructions();
        if let Some(expected) = expected_version {
            if expected != current.version {
                return Err(ReviewError::InstructionsConflict { expected, current: current.version });
            }
        }
        let doc = InstructionsDoc { text: text.to_string(), version: current.version + 1, updated_at: Utc::now() };
        self.state.write().unwrap_or_else(|e| e.into_inner()).instructions = doc.clone();
        if let Err(e) = self.append(&mut writer, &[Event::Instructions { doc: doc.clone() }]) {
            self.state.write().unwrap_or_else(|e| e.into_inner()).instructions = current;
            return Err(e);
        }
        Ok(doc)
    }

    /// Dataset of reviewed items. Only accepted and corrected items are
    /// ever exported, whatever else `statuses` names; corrected items carry
    /// their corrected ranking.
    pub fn export_reviewed(&self, statuses: &[ReviewStatus]) -> Result<GeneratedDataset> {
        let wanted: Vec<ReviewStatus> = statuses
            .iter()
            .copied()
            .filter(|s| matches!(s, ReviewStatus::Accepted | ReviewStatus::Corrected))
            .collect();
        let items = self.list(&wanted);
        if wanted.is_empty() || items.is_empty() {
            return Err(ReviewError::NothingToExport);
        }
        let origin = items[0].origin.clone();
        let method = items[0].method.clone();
        if items.iter().any(|i| i.origin != origin || i.method != method) {
            return Err(ReviewError::MixedOrigins);
        }
        let records: Vec<DatasetRecord> = items
            .iter()
            .map(|item| {
                let mut entries = item.final_entries().to_vec();
                entries.truncate(origin.t);
                DatasetRecord {
                    query_id: item.query_id.clone(),
                    method: item.method.clone(),
                    result_id: item.id.clone(),
                    entries,
                    pool_size: item.pool_size,
                    distinct_grades: item.distinct_grades,
                    oracle_status: match item.status {
                        ReviewStatus::Corrected => OracleStatus::Corrected,
                        _ => OracleStatus::Accepted,
                    },
                    unscored: item
                        .candidates
                        .iter()
                        .filter(|c| c.score.is_none())
                        .map(|c| c.doc_id.clone())
                        .collect(),
                }
            })
            .collect();
        let manifest = Manifest {
            format: DATASET_FORMAT.into(),
            version: DATASET_VERSION,
            seed: origin.seed,
            method,
            t: origin.t,
            filter: origin.filter,
            templates_sha256: origin.templates_sha256,
            model: origin.model,
            config_hash: origin.config_hash,
            ledger: LedgerSummary::default(),
            failures: Vec::new(),
            filtered_out: Vec::new(),
            record_count: records.len(),
        };
        Ok(GeneratedDataset { manifest, records })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Document;
    use crate::rerank::{CandidateScore, MethodKind};

    fn abc_verdicts() -> Vec<PairVerdict> {
        let order = ["A", "B", "C"];
        let mut out = Vec::new();
        for (i, a) in order.iter().enumerate() {
            for (j, b) in order.iter().enumerate() {
                if i != j {
                    out.push(PairVerdict::new(*a, *b, if i < j { 1 } else { -1 }));
                }
            }
        }
        out
    }

    fn docs() -> DocumentMap {
        ["q", "A", "B", "C"]
            .iter()
            .map(|id| (id.to_string(), Document::new(*id, format!("text of {id}"))))
            .collect()
    }

    fn pcs_result(query_id: &str) -> RerankResult {
        let verdicts = abc_verdicts();
        let totals = aggregate_pair_verdicts(&["A", "B", "C"], &verdicts).unwrap();
        let scores = totals
            .iter()
            .map(|(d, t)| CandidateScore { doc_id: d.clone(), score: *t as f64, explanation: None, warning: None })
            .collect();
        RerankResult::from_parts(query_id, RerankMethod::new(MethodKind::PcsLlm), scores, verdicts, Vec::new()).unwrap()
    }

    fn input(query_id: &str) -> ReviewInput {
        let mut d = docs();
        d.insert(query_id.to_string(), Document::new(query_id, "query"));
        ReviewInput::from_result(pcs_result(query_id), &d, ItemOrigin::adhoc(10)).unwrap()
    }

    fn order(item: &ReviewItem) -> Vec<&str> {
        item.final_entries().iter().map(|e| e.doc_id.as_str()).collect()
    }

    #[test]
    fn enqueue_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let store = ReviewStore::open(dir.path()).unwrap();
        let ids = store.enqueue((0..5).map(|i| input(&format!("q{i}"))).collect()).unwrap();
        assert_eq!(ids.len(), 5);
        assert_eq!(store.list(&[ReviewStatus::Pending]).len(), 5);
        assert!(store.list(&[]).iter().all(|i| i.revision == 0));
        let again = store.enqueue(vec![input("q0")]).unwrap();
        assert_eq!(again, vec![ids[0].clone()]);
        assert_eq!(store.list(&[]).len(), 5);
        assert!(store.enqueue(Vec::new()).unwrap().is_empty());
    }

    #[test]
    fn actions_and_revisions() {
        let dir = tempfile::tempdir().unwrap();
        let store = ReviewStore::open(dir.path()).unwrap();
        let id = store.enqueue(vec![input("q0")]).unwrap().remove(0);
        let item = store.apply_action(&id, 0, ReviewAction::Accept).unwrap();
        assert_eq!((item.status, item.revision), (ReviewStatus::Accepted, 1));

        let stale = store.apply_action(&id, 0, ReviewAction::Reject { reason: None });
        assert!(matches!(stale, Err(ReviewError::Conflict { current: 1, .. })));
        assert_eq!(store.get(&id).unwrap(), item);

        let order_ok: Vec<String> = ["C", "A", "B"].iter().map(|s| s.to_string()).collect();
        let item = store.apply_action(&id, 1, ReviewAction::Correct { order: order_ok }).unwrap();
        assert_eq!(item.status, ReviewStatus::Corrected);
        assert_eq!(order(&item), vec!["C", "A", "B"]);

        for bad in [vec!["A", "B"], vec!["A", "B", "B"], vec!["A", "B", "Z"]] {
            let bad = bad.into_iter().map(String::from).collect();
            assert!(matches!(
                store.apply_action(&id, 2, ReviewAction::Correct { order: bad }),
                Err(ReviewError::InvalidPermutation(_))
            ));
        }
        let item = store.apply_action(&id, 2, ReviewAction::Reject { reason: Some("off topic".into()) }).unwrap();
        assert!(item.corrected.is_none());
        assert_eq!(item.revision, 3);
        assert!(matches!(store.get("nope"), Err(ReviewError::NotFound(_))));
    }

    #[test]
    fn correct_pair_reaggregates_with_override() {
        let dir = tempfile::tempdir().unwrap();
        let store = ReviewStore::open(dir.path()).unwrap();
        let id = store.enqueue(vec![input("q0")]).unwrap().remove(0);
        let item = store
            .apply_action(&id, 0, ReviewAction::CorrectPair { a: "C".into(), b: "A".into(), verdict: 1 })
            .unwrap();
        // A: vs B +2, vs C -2 -> 0; B: vs A -2, vs C +2 -> 0; C: vs A +2, vs B -2 -> 0
        assert!(item.final_entries().iter().all(|e| e.score == 0.0 && e.rank == 1));
        assert_eq!(item.status, ReviewStatus::Corrected);
        let item = store
            .apply_action(&id, 1, ReviewAction::CorrectPair { a: "B".into(), b: "C".into(), verdict: -1 })
            .unwrap();
        assert_eq!(order(&item), vec!["C", "A", "B"]);
        assert!(matches!(
            store.apply_action(&id, 2, ReviewAction::CorrectPair { a: "A".into(), b: "Z".into(), verdict: 1 }),
            Err(ReviewError::UnknownPair { .. })
        ));
        assert!(matches!(
            store.apply_action(&id, 2, ReviewAction::CorrectPair { a: "A".into(), b: "B".into(), verdict: 3 }),
            Err(ReviewError::InvalidVerdict(3))
        ));
    }

    #[test]
    fn log_replay_and_reopen() {
        let dir = tempfile::tempdir().unwrap();
        {
            let store = ReviewStore::open_with(dir.path(), 3).unwrap();
            let ids = store.enqueue((0..3).map(|i| input(&format!("q{i}"))).collect()).unwrap();
            store.apply_action(&ids[0], 0, ReviewAction::Accept).unwrap();
            store.apply_action(&ids[1], 0, ReviewAction::CorrectPair { a: "A".into(), b: "B".into(), verdict: -1 }).unwrap();
            store.update_instructions("prefer same phase", Some(0)).unwrap();
            store.apply_action(&ids[2], 0, ReviewAction::Reject { reason: None }).unwrap();
            assert_eq!(ReviewStore::replay(dir.path()).unwrap(), store.state());
        }
        assert!(dir.path().join(SNAPSHOT_FILE).exists());
        let reopened = ReviewStore::open(dir.path()).unwrap();
        assert_eq!(reopened.state(), ReviewStore::replay(dir.path()).unwrap());
        assert_eq!(reopened.instructions().version, 1);
    }

    #[test]
    fn torn_tail_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let id = {
            let store = ReviewStore::open(dir.path()).unwrap();
            store.enqueue(vec![input("q0")]).unwrap().remove(0)
        };
        let mut f = OpenOptions::new().append(true).open(dir.path().join(LOG_FILE)).unwrap();
        f.write_all(br#"{"event":"action","item_id""#).unwrap();
        drop(f);
        let store = ReviewStore::open(dir.path()).unwrap();
        store.apply_action(&id, 0, ReviewAction::Accept).unwrap();
        let again = ReviewStore::open(dir.path()).unwrap();
        assert_eq!(again.get(&id).unwrap().status, ReviewStatus::Accepted);
    }

    #[test]
    fn instructions_versioning() {
        let dir = tempfile::tempdir().unwrap();
        let store = ReviewStore::open(dir.path()).unwrap();
        assert_eq!(store.instructions().version, 0);
        let d1 = store.update_instructions("one", None).unwrap();
        let d2 = store.update_instructions("two", Some(1)).unwrap();
        assert!(d2.version > d1.version);
        assert!(matches!(store.update_instructions("three", Some(1)), Err(ReviewError::InstructionsConflict { .. })));
        assert!(matches!(store.update_instructions("  ", None), Err(ReviewError::EmptyInstructions)));
    }

    #[test]
    fn export_by_status() {
        let dir = tempfile::tempdir().unwrap();
        let store = ReviewStore::open(dir.path()).unwrap();
        let ids = store.enqueue((0..3).map(|i| input(&format!("q{i}"))).collect()).unwrap();
        let both = [ReviewStatus::Accepted, ReviewStatus::Corrected];
        assert!(matches!(store.export_reviewed(&both), Err(ReviewError::NothingToExport)));
        store.apply_action(&ids[0], 0, ReviewAction::Accept).unwrap();
        store.apply_action(&ids[1], 0, ReviewAction::Reject { reason: None }).unwrap();
        let ds = store.export_reviewed(&[ReviewStatus::Accepted, ReviewStatus::Rejected, ReviewStatus::Pending]).unwrap();
        assert_eq!(ds.records.len(), 1);
        let order: Vec<String> = ["B", "C", "A"].iter().map(|s| s.to_string()).collect();
        store.apply_action(&ids[2], 0, ReviewAction::Correct { order: order.clone() }).unwrap();
        let ds = store.export_reviewed(&both).unwrap();
        assert_eq!(ds.records.len(), 2);
        let corrected = ds.records.iter().find(|r| r.oracle_status == OracleStatus::Corrected).unwrap();
        let got: Vec<&str> = corrected.entries.iter().map(|e| e.doc_id.as_str()).collect();
        assert_eq!(got, vec!["B", "C", "A"]);
        ds.validate().unwrap();
    }

    #[test]
    fn concurrent_reviewers_conflict() {
        let dir = tempfile::tempdir().unwrap();
        let store = ReviewStore::open(dir.path()).unwrap();
        let id = store.enqueue(vec![input("q0")]).unwrap().remove(0);
        let barrier = std::sync::Barrier::new(2);
        let outcomes: Vec<bool> = std::thread::scope(|s| {
            let handles: Vec<_> = [ReviewAction::Accept, ReviewAction::Reject { reason: None }]
                .into_iter()
                .map(|action| {
                    let (store, id, barrier) = (&store, &id, &barrier);
                    s.spawn(move || {
                        barrier.wait();
                        store.apply_action(id, 0, action).is_ok()
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        assert_eq!(outcomes.iter().filter(|ok| **ok).count(), 1);
        assert_eq!(store.get(&id).unwrap().revision, 1);
    }
}
