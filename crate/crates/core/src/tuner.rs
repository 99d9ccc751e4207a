//! Seeded search over BM25 `{k1, b}` maximizing mean average precision
//! against a training signal.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bm25::{Bm25Error, Bm25Index, Bm25Params, PreparedQuery};
use crate::corpus::{Document, DocumentMap};
use crate::metrics::{aggregate, average_precision, query_metrics, AggregateReport, MetricError};
use crate::rerank::RerankResult;

pub const DEFAULT_TRIALS: usize = 50;
pub const DEFAULT_K1_RANGE: (f64, f64) = (1.2, 2.0);
pub const DEFAULT_B_RANGE: (f64, f64) = (0.1, 1.0);
pub const DEFAULT_SCORE_CUTOFF: f64 = 0.5;

#[derive(Debug, Error)]
pub enum TuneError {
    #[error("signal has no queries")]
    EmptySignal,
    #[error("no query has a non-empty relevant set")]
    NoEvaluableQueries,
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("invalid tuning configuration: {0}")]
    InvalidConfig(String),
    #[error("document {0} is not in the corpus")]
    UnknownDocument(String),
    #[error("signal mixes pairwise and single-candidate results")]
    MixedMethods,
    #[error(transparent)]
    Bm25(#[from] Bm25Error),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

pub type Result<T> = std::result::Result<T, TuneError>;

/// How a signal value is turned into binary relevance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum SignalRule {
    /// Graded judgments: relevant when grade >= threshold.
    GradeThreshold { threshold: u8 },
    /// Pairwise totals: relevant when the total is positive.
    PositiveTotal,
    /// Single-candidate scores: relevant when score >= cutoff.
    ScoreCutoff { cutoff: f64 },
}

impl SignalRule {
    pub fn is_relevant(&self, value: f64) -> bool {
        match *self {
            SignalRule::GradeThreshold { threshold } => value >= f64::from(threshold),
            SignalRule::PositiveTotal => value > 0.0,
            SignalRule::ScoreCutoff { cutoff } => value >= cutoff,
        }
    }
}

/// Per-query candidate values plus the rule that binarizes them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    /// `ideal-train`, `ideal-test` or a reranking method name.
    pub provenance: String,
    pub rule: SignalRule,
    pub lists: BTreeMap<String, Vec<(String, f64)>>,
}

impl Signal {
    pub fn from_grades(
        provenance: impl Into<String>,
        lists: &BTreeMap<String, Vec<(String, u8)>>,
        threshold: u8,
    ) -> Self {
        Self {
            provenance: provenance.into(),
            rule: SignalRule::GradeThreshold { threshold },
            lists: lists
                .iter()
                .map(|(q, c)| (q.clone(), c.iter().map(|(d, g)| (d.clone(), f64::from(*g))).collect()))
                .collect(),
        }
    }

    /// Builds a signal from rerank output: pairwise totals use
    /// [`SignalRule::PositiveTotal`], single-candidate scores use
    /// [`SignalRule::ScoreCutoff`] with `cutoff`.
    pub fn from_results(results: &[RerankResult], cutoff: f64) -> Result<Self> {
        let first = results.first().ok_or(TuneError::EmptySignal)?;
        let pairwise = first.method.is_pairwise();
        if results.iter().any(|r| r.method.is_pairwise() != pairwise) {
            return Err(TuneError::MixedMethods);
        }
        let mut names: BTreeSet<&str> = results.iter().map(|r| r.method.name()).collect();
        let provenance = if names.len() == 1 { names.pop_first().unwrap().to_string() } else { names.into_iter().collect::<Vec<_>>().join("+") };
        Ok(Self {
            provenance,
            rule: if pairwise { SignalRule::PositiveTotal } else { SignalRule::ScoreCutoff { cutoff } },
            lists: results
                .iter()
                .map(|r| {
                    let entries = r.ranking.entries.iter().map(|e| (e.doc_id.clone(), e.score)).collect();
                    (r.query_id.clone(), entries)
                })
                .collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RelevanceSets {
    pub relevant: BTreeMap<String, BTreeSet<String>>,
    /// Candidate ids per evaluable query, in signal order.
    pub candidates: BTreeMap<String, Vec<String>>,
    /// Queries left out because nothing in them is relevant.
    pub excluded: Vec<String>,
}

pub fn signal_to_relevance(signal: &Signal) -> Result<RelevanceSets> {
    if signal.lists.is_empty() {
        return Err(TuneError::EmptySignal);
    }
    let mut out = RelevanceSets::default();
    for (query_id, list) in &signal.lists {
        let relevant: BTreeSet<String> = list
            .iter()
            .filter(|(_, v)| signal.rule.is_relevant(*v))
            .map(|(d, _)| d.clone())
            .collect();
        if relevant.is_empty() {
            log::warn!("query {query_id}: no relevant candidate under {:?}; excluded", signal.rule);
            out.excluded.push(query_id.clone());
            continue;
        }
        out.relevant.insert(query_id.clone(), relevant);
        out.candidates.insert(query_id.clone(), list.iter().map(|(d, _)| d.clone()).collect());
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SearchMode {
    /// Uniform samples from the box after the default point.
    Random,
    /// Evenly spaced lattice including both range ends, after the default
    /// point. The trial count is `1 + k1_steps * b_steps`.
    Grid { k1_steps: usize, b_steps: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneConfig {
    pub n_trials: usize,
    pub k1_range: (f64, f64),
    pub b_range: (f64, f64),
    pub seed: u64,
    pub mode: SearchMode,
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self {
            n_trials: DEFAULT_TRIALS,
            k1_range: DEFAULT_K1_RANGE,
            b_range: DEFAULT_B_RANGE,
            seed: 0,
            mode: SearchMode::Random,
        }
    }
}

impl TuneConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    /// 9 x 10 lattice over the default box, steps of 0.1 on both axes.
    pub fn grid_9x10() -> Self {
        Self { mode: SearchMode::Grid { k1_steps: 9, b_steps: 10 }, n_trials: 91, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TuneError::InvalidConfig(m));
        if self.n_trials == 0 {
            return bad("n_trials must be >= 1".into());
        }
        let (k_lo, k_hi) = self.k1_range;
        let (b_lo, b_hi) = self.b_range;
        if !(k_lo.is_finite() && k_hi.is_finite() && 0.0 < k_lo && k_lo < k_hi) {
            return bad(format!("k1 range [{k_lo}, {k_hi}] must be positive and non-degenerate"));
        }
        if !(0.0 <= b_lo && b_lo < b_hi && b_hi <= 1.0) {
            return bad(format!("b range [{b_lo}, {b_hi}] must be a non-degenerate part of [0, 1]"));
        }
        if let SearchMode::Grid { k1_steps, b_steps } = self.mode {
            if k1_steps < 2 || b_steps < 2 {
                return bad("grid needs at least 2 steps per axis".into());
            }
            if self.n_trials != 1 + k1_steps * b_steps {
                return bad(format!("grid of {k1_steps}x{b_steps} needs n_trials = {}", 1 + k1_steps * b_steps));
            }
        }
        Ok(())
    }

    /// Parameter points in trial order; trial 0 is always the default.
    pub fn trial_points(&self) -> Result<Vec<Bm25Params>> {
        self.validate()?;
        let mut points = vec![Bm25Params::default()];
        match self.mode {
            SearchMode::Random => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                for _ in 1..self.n_trials {
                    let k1 = rng.random_range(self.k1_range.0..=self.k1_range.1);
                    let b = rng.random_range(self.b_range.0..=self.b_range.1);
                    points.push(Bm25Params { k1, b });
                }
            }
            SearchMode::Grid { k1_steps, b_steps } => {
                let at = |(lo, hi): (f64, f64), i: usize, n: usize| lo + (hi - lo) * i as f64 / (n - 1) as f64;
                for i in 0..k1_steps {
                    for j in 0..b_steps {
                        points.push(Bm25Params { k1: at(self.k1_range, i, k1_steps), b: at(self.b_range, j, b_steps) });
                    }
                }
            }
        }
        Ok(points)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub params: Bm25Params,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub best: Bm25Params,
    pub best_objective: f64,
    pub best_trial: usize,
    pub history: Vec<TrialRecord>,
    pub provenance: String,
    pub rule: SignalRule,
    pub config: TuneConfig,
    pub queries_used: usize,
    pub excluded_queries: Vec<String>,
    pub unindexed_candidates: usize,
}

impl TuneResult {
    /// Objective of trial 0, the default parameters.
    pub fn default_objective(&self) -> f64 {
        self.history[0].objective
    }
}

fn lookup<'a>(documents: &'a DocumentMap, id: &str) -> Result<&'a Document> {
    documents.get(id).ok_or_else(|| TuneError::UnknownDocument(id.to_string()))
}

fn prepare_queries(
    index: &Bm25Index,
    documents: &DocumentMap,
    lists: &BTreeMap<String, Vec<String>>,
) -> Result<Vec<PreparedQuery>> {
    lists
        .iter()
        .map(|(query_id, ids)| {
            let query = lookup(documents, query_id)?;
            let candidates = ids.iter().map(|d| lookup(documents, d)).collect::<Result<Vec<_>>>()?;
            Ok(index.prepare(query_id, &query.text, &candidates))
        })
        .collect()
}

/// Mean average precision of BM25 rankings under `params`.
pub fn objective(
    prepared: &[PreparedQuery],
    relevant: &BTreeMap<String, BTreeSet<String>>,
    params: &Bm25Params,
) -> Result<f64> {
    let mut sum = 0.0;
    for q in prepared {
        let ranking = q.rank(params)?;
        sum += average_precision(&ranking.doc_ids(), &relevant[q.query_id()])?;
    }
    Ok(sum / prepared.len() as f64)
}

pub fn tune(index: &Bm25Index, documents: &DocumentMap, signal: &Signal, config: &TuneConfig) -> Result<TuneResult> {
    let points = config.trial_points()?;
    let relevance = signal_to_relevance(signal)?;
    if relevance.relevant.is_empty() {
        return Err(TuneError::NoEvaluableQueries);
    }
    let prepared = prepare_queries(index, documents, &relevance.candidates)?;
    let history = points
        .par_iter()
        .enumerate()
        .map(|(trial, params)| {
            Ok(TrialRecord { trial, params: *params, objective: objective(&prepared, &relevance.relevant, params)? })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best = &history[0];
    for t in &history[1..] {
        if t.objective > best.objective {
            best = t;
        }
    }
    Ok(TuneResult {
        best: best.params,
        best_objective: best.objective,
        best_trial: best.trial,
        provenance: signal.provenance.clone(),
        rule: signal.rule,
        config: config.clone(),
        queries_used: prepared.len(),
        excluded_queries: relevance.excluded,
        unindexed_candidates: prepared.iter().map(PreparedQuery::unindexed).sum(),
        history,
    })
}

/// Ranks every test list with BM25 under `params` and macro-averages the
/// metrics against the graded truth.
pub fn evaluate_tuned(
    params: &Bm25Params,
    index: &Bm25Index,
    documents: &DocumentMap,
    test_lists: &BTreeMap<String, Vec<(String, u8)>>,
    threshold: u8,
    ks: &[usize],
) -> Result<AggregateReport> {
    params.validate()?;
    if test_lists.values().all(Vec::is_empty) {
        return Err(TuneError::EmptyTestSet);
    }
    let ids: BTreeMap<String, Vec<String>> = test_lists
        .iter()
        .filter(|(_, c)| !c.is_empty())
        .map(|(q, c)| (q.clone(), c.iter().map(|(d, _)| d.clone()).collect()))
        .collect();
    let prepared = prepare_queries(index, documents, &ids)?;
    let per_query = prepared
        .iter()
        .map(|q| Ok(query_metrics(&q.rank(params)?, &test_lists[q.query_id()], threshold, ks)?))
        .collect::<Result<Vec<_>>>()?;
    let mut report = aggregate(&per_query, ks)?;
    report.unindexed_candidates = prepared.iter().map(PreparedQuery::unindexed).sum();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{Ranking, DEFAULT_KS};
    use crate::rerank::{MethodKind, RerankMethod};

    fn grades(items: &[(&str, &[(&str, u8)])]) -> BTreeMap<String, Vec<(String, u8)>> {
        items
            .iter()
            .map(|(q, c)| (q.to_string(), c.iter().map(|(d, g)| (d.to_string(), *g)).collect()))
            .collect()
    }

    fn corpus(items: &[(&str, &str)]) -> DocumentMap {
        items.iter().map(|(i, t)| (i.to_string(), Document::new(*i, *t))).collect()
    }

    #[test]
    fn relevance_rules() {
        let s = Signal::from_grades("ideal-train", &grades(&[("q", &[("a", 2), ("b", 1), ("c", 0)])]), 1);
        let r = signal_to_relevance(&s).unwrap();
        assert_eq!(r.relevant["q"], ["a", "b"].iter().map(|s| s.to_string()).collect());

        let pcs = Signal {
            provenance: "pcs_llm".into(),
            rule: SignalRule::PositiveTotal,
            lists: [("q".to_string(), vec![("a".into(), 4.0), ("b".into(), 0.0), ("c".into(), -4.0)])].into(),
        };
        let r = signal_to_relevance(&pcs).unwrap();
        assert_eq!(r.relevant["q"].len(), 1);
        assert!(r.relevant["q"].contains("a"));

        let zero = Signal::from_grades("ideal-train", &grades(&[("q", &[("a", 0), ("b", 0)]), ("p", &[("x", 2)])]), 1);
        let r = signal_to_relevance(&zero).unwrap();
        assert_eq!(r.excluded, vec!["q".to_string()]);
        assert!(r.relevant.contains_key("p"));

        let empty = Signal::from_grades("ideal-train", &BTreeMap::new(), 1);
        assert!(matches!(signal_to_relevance(&empty), Err(TuneError::EmptySignal)));
        assert!(SignalRule::ScoreCutoff { cutoff: 0.5 }.is_relevant(0.5));
        assert!(!SignalRule::ScoreCutoff { cutoff: 0.5 }.is_relevant(0.49));
    }

    #[test]
    fn signal_from_results_picks_rule() {
        let ranking = Ranking::from_scores("q", vec![("a".into(), 2.0), ("b".into(), -2.0)]).unwrap();
        let mut r = RerankResult {
            result_id: "x".into(),
            query_id: "q".into(),
            method: RerankMethod::new(MethodKind::PcsLlm),
            scores: Vec::new(),
            ranking,
            verdicts: Vec::new(),
            failures: Vec::new(),
        };
        let s = Signal::from_results(std::slice::from_ref(&r), 0.5).unwrap();
        assert_eq!(s.rule, SignalRule::PositiveTotal);
        assert_eq!(s.provenance, "pcs_llm");
        let mut scs = r.clone();
        scs.method = RerankMethod::new(MethodKind::ScsLlm);
        assert!(matches!(Signal::from_results(&[r.clone(), scs.clone()], 0.5), Err(TuneError::MixedMethods)));
        r.query_id = "p".into();
        assert_eq!(Signal::from_results(&[scs], 0.3).unwrap().rule, SignalRule::ScoreCutoff { cutoff: 0.3 });
    }

    #[test]
    fn config_validation_and_points() {
        let c = TuneConfig::with_seed(7);
        let pts = c.trial_points().unwrap();
        assert_eq!(pts.len(), 50);
        assert_eq!(pts[0], Bm25Params { k1: 1.5, b: 0.75 });
        for p in &pts[1..] {
            assert!((1.2..=2.0).contains(&p.k1) && (0.1..=1.0).contains(&p.b));
        }
        assert_eq!(pts, TuneConfig::with_seed(7).trial_points().unwrap());
        assert_ne!(pts, TuneConfig::with_seed(8).trial_points().unwrap());

        let grid = TuneConfig::grid_9x10().trial_points().unwrap();
        assert_eq!(grid.len(), 91);
        assert!((grid[1].k1 - 1.2).abs() < 1e-12 && (grid[1].b - 0.1).abs() < 1e-12);
        assert!((grid[90].k1 - 2.0).abs() < 1e-12 && (grid[90].b - 1.0).abs() < 1e-12);

        for bad in [
            TuneConfig { n_trials: 0, ..TuneConfig::default() },
            TuneConfig { k1_range: (2.0, 2.0), ..TuneConfig::default() },
            TuneConfig { b_range: (0.5, 1.5), ..TuneConfig::default() },
            TuneConfig { mode: SearchMode::Grid { k1_steps: 9, b_steps: 10 }, ..TuneConfig::default() },
        ] {
            assert!(matches!(bad.validate(), Err(TuneError::InvalidConfig(_))));
        }
    }

    #[test]
    fn degenerate_signal_keeps_default() {
        // every candidate identical in length and content: objective is flat
        let docs = corpus(&[("q", "alpha"), ("a", "alpha"), ("b", "beta"), ("c", "alpha"), ("d", "beta")]);
        let index = Bm25Index::build(docs.values()).unwrap();
        let s = Signal::from_grades("ideal-train", &grades(&[("q", &[("a", 2), ("b", 0), ("c", 1), ("d", 0)])]), 1);
        let result = tune(&index, &docs, &s, &TuneConfig::with_seed(3)).unwrap();
        assert_eq!(result.best_trial, 0);
        assert_eq!(result.best, Bm25Params::default());
        assert_eq!(result.best_objective, 1.0);
        assert!(result.history.iter().all(|t| t.objective == 1.0));
    }

    #[test]
    fn tune_is_deterministic_and_consistent_with_evaluation() {
        let docs = corpus(&[
            ("q1", "heart failure trial reduced ejection fraction"),
            ("q2", "diabetes insulin glucose control"),
            ("a", "heart failure ejection"),
            ("b", "heart failure heart failure heart failure placebo placebo placebo placebo placebo placebo"),
            ("c", "ejection fraction trial"),
            ("d", "insulin glucose"),
            ("e", "glucose glucose glucose diet diet diet diet diet diet diet exercise exercise"),
            ("f", "control group"),
        ]);
        let index = Bm25Index::build(docs.values()).unwrap();
        let lists = grades(&[
            ("q1", &[("a", 2), ("b", 0), ("c", 1)]),
            ("q2", &[("d", 2), ("e", 0), ("f", 1)]),
        ]);
        let s = Signal::from_grades("ideal-train", &lists, 1);
        let cfg = TuneConfig::with_seed(11);
        let r1 = tune(&index, &docs, &s, &cfg).unwrap();
        let r2 = tune(&index, &docs, &s, &cfg).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(r1.history.len(), 50);
        assert!(r1.best_objective >= r1.default_objective());
        assert!(r1.history.iter().all(|t| t.objective <= r1.best_objective));
        let report = evaluate_tuned(&r1.best, &index, &docs, &lists, 1, &DEFAULT_KS).unwrap();
        assert!((report.report.map - r1.best_objective).abs() < 1e-12);
        assert_eq!(report.queries, 2);
    }

    #[test]
    fn evaluation_errors() {
        let docs = corpus(&[("q", "x"), ("a", "x")]);
        let index = Bm25Index::build(docs.values()).unwrap();
        let p = Bm25Params::default();
        assert!(matches!(evaluate_tuned(&p, &index, &docs, &BTreeMap::new(), 1, &[1]), Err(TuneError::EmptyTestSet)));
        let missing = grades(&[("q", &[("zz", 1)])]);
        assert!(matches!(
            evaluate_tuned(&p, &index, &docs, &missing, 1, &[1]),
            Err(TuneError::UnknownDocument(ref d)) if d == "zz"
        ));
        let s = Signal::from_grades("t", &grades(&[("q", &[("a", 0)])]), 1);
        assert!(matches!(tune(&index, &docs, &s, &TuneConfig::default()), Err(TuneError::NoEvaluableQueries)));
    }
}
