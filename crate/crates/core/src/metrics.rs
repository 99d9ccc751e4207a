//! Ranking comparison and retrieval-quality metrics.
//!
//! Rank correlations (Kendall tau-b, Spearman rho) compare a predicted
//! ordering against a graded ground truth; the precision family (P@K, AP,
//! MAP, MRR) scores an ordering against a binary relevant set. Metrics whose
//! denominator vanishes return [`MetricError::Undefined`] rather than 0.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("score at position {position} is not finite")]
    NonFiniteScore { position: usize },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("need at least {needed} observations, got {got}")]
    TooFewObservations { needed: usize, got: usize },
    #[error("{metric} is undefined: {reason}")]
    Undefined { metric: &'static str, reason: &'static str },
    #[error("document {doc_id} is {side}")]
    DocSetMismatch { doc_id: String, side: &'static str },
    #[error("duplicate document {0} in ranking")]
    DuplicateDoc(String),
}

pub type Result<T> = std::result::Result<T, MetricError>;

/// One ranked candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub doc_id: String,
    pub score: f64,
    pub rank: u32,
}

/// An ordered candidate list with competition ranks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub query_id: String,
    pub entries: Vec<RankedEntry>,
}

impl Ranking {
    /// Sorts by descending score (ties broken by doc id) and assigns
    /// competition ranks.
    pub fn from_scores(query_id: impl Into<String>, scores: Vec<(String, f64)>) -> Result<Self> {
        for (position, (_, s)) in scores.iter().enumerate() {
            if !s.is_finite() {
                return Err(MetricError::NonFiniteScore { position });
            }
        }
        let mut scores = scores;
        scores.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let values: Vec<f64> = scores.iter().map(|(_, s)| *s).collect();
        let ranks = assign_competition_ranks(&values)?;
        let entries = scores
            .into_iter()
            .zip(ranks)
            .map(|((doc_id, score), rank)| RankedEntry { doc_id, score, rank })
            .collect();
        Ok(Self { query_id: query_id.into(), entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn doc_ids(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.doc_id.as_str()).collect()
    }

    /// Keeps the first `t` entries in ranked order.
    pub fn truncate(&mut self, t: usize) {
        self.entries.truncate(t);
    }
}

/// Competition ("1224") ranks for `scores`, returned in input order.
///
/// Higher score means better rank. Equal scores share the smallest rank of
/// their group and the following group skips the tied positions.
pub fn assign_competition_ranks(scores: &[f64]) -> Result<Vec<u32>> {
    if let Some(position) = scores.iter().position(|s| !s.is_finite()) {
        return Err(MetricError::NonFiniteScore { position });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut ranks = vec![0u32; scores.len()];
    let mut current = 0u32;
    for (pos, &idx) in order.iter().enumerate() {
        if pos == 0 || scores[idx] != scores[order[pos - 1]] {
            current = pos as u32 + 1;
        }
        ranks[idx] = current;
    }
    Ok(ranks)
}

/// Fractional (average) ranks, 1-based, ascending in value.
pub fn fractional_ranks(values: &[f64]) -> Result<Vec<f64>> {
    if let Some(position) = values.iter().position(|s| !s.is_finite()) {
        return Err(MetricError::NonFiniteScore { position });
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end (0-based) share the mean of ranks start+1..=end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = avg;
        }
        start = end;
    }
    Ok(ranks)
}

/// Pair classification for Kendall's tau-b.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TieCounts {
    pub concordant: u64,
    pub discordant: u64,
    pub ties_first_only: u64,
    pub ties_second_only: u64,
    pub ties_both: u64,
}

impl TieCounts {
    pub fn total(&self) -> u64 {
        self.concordant
            + self.discordant
            + self.ties_first_only
            + self.ties_second_only
            + self.ties_both
    }
}

fn check_paired(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(MetricError::LengthMismatch { left: x.len(), right: y.len() });
    }
    if x.len() < 2 {
        return Err(MetricError::TooFewObservations { needed: 2, got: x.len() });
    }
    if let Some(position) = x.iter().chain(y).position(|v| !v.is_finite()) {
        return Err(MetricError::NonFiniteScore { position: position % x.len() });
    }
    Ok(())
}

/// Classifies all n(n-1)/2 index pairs of two aligned rank vectors.
pub fn pair_counts(x: &[f64], y: &[f64]) -> Result<TieCounts> {
    check_paired(x, y)?;
    let mut counts = TieCounts::default();
    for i in 0..x.len() {
        for j in (i + 1)..x.len() {
            let dx = x[i].partial_cmp(&x[j]).unwrap_or(Ordering::Equal);
            let dy = y[i].partial_cmp(&y[j]).unwrap_or(Ordering::Equal);
            match (dx, dy) {
                (Ordering::Equal, Ordering::Equal) => counts.ties_both += 1,
                (Ordering::Equal, _) => counts.ties_first_only += 1,
                (_, Ordering::Equal) => counts.ties_second_only += 1,
                (a, b) if a == b => counts.concordant += 1,
                _ => counts.discordant += 1,
            }
        }
    }
    Ok(counts)
}

/// Kendall's tau-b: (C - D) / sqrt((C + D + T1)(C + D + T2)).
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> Result<f64> {
    let c = pair_counts(x, y)?;
    let (cc, dd) = (c.concordant as f64, c.discordant as f64);
    let denom = ((cc + dd + c.ties_first_only as f64) * (cc + dd + c.ties_second_only as f64)).sqrt();
    if denom == 0.0 {
        return Err(MetricError::Undefined {
            metric: "kendall_tau_b",
            reason: "every pair is tied in at least one variable",
        });
    }
    Ok(((cc - dd) / denom).clamp(-1.0, 1.0))
}

/// Spearman's rho: Pearson correlation of fractional ranks.
pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<f64> {
    check_paired(x, y)?;
    let rx = fractional_ranks(x)?;
    let ry = fractional_ranks(y)?;
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricError::Undefined {
            metric: "spearman_rho",
            reason: "zero rank variance",
        });
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// |top-k ∩ relevant| / k, with k capped at the list length.
///
/// An empty list (or k = 0) yields 0.
pub fn precision_at_k<S: AsRef<str>>(ranked: &[S], relevant: &BTreeSet<String>, k: usize) -> f64 {
    let k = k.min(ranked.len());
    if k == 0 {
        return 0.0;
    }
    let hits = ranked[..k].iter().filter(|d| relevant.contains(d.as_ref())).count();
    hits as f64 / k as f64
}

/// Average precision: (1/R) Σ_k P@k · rel(k).
pub fn average_precision<S: AsRef<str>>(ranked: &[S], relevant: &BTreeSet<String>) -> Result<f64> {
    if relevant.is_empty() {
        return Err(MetricError::Undefined {
            metric: "average_precision",
            reason: "empty relevant set",
        });
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, d) in ranked.iter().enumerate() {
        if relevant.contains(d.as_ref()) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / relevant.len() as f64)
}

pub fn mean_average_precision(per_query: &[f64]) -> Result<f64> {
    if per_query.is_empty() {
        return Err(MetricError::Undefined { metric: "map", reason: "no queries" });
    }
    Ok(per_query.iter().sum::<f64>() / per_query.len() as f64)
}

/// 1-based position of the first relevant document, if any.
pub fn first_relevant_rank<S: AsRef<str>>(ranked: &[S], relevant: &BTreeSet<String>) -> Option<u32> {
    ranked
        .iter()
        .position(|d| relevant.contains(d.as_ref()))
        .map(|p| p as u32 + 1)
}

/// Mean of 1/rank_i; queries without a relevant hit (`None`) contribute 0.
pub fn mean_reciprocal_rank(first_relevant: &[Option<u32>]) -> Result<f64> {
    if first_relevant.is_empty() {
        return Err(MetricError::Undefined { metric: "mrr", reason: "no queries" });
    }
    let sum: f64 = first_relevant
        .iter()
        .map(|r| r.map_or(0.0, |r| 1.0 / r as f64))
        .sum();
    Ok(sum / first_relevant.len() as f64)
}

pub const DEFAULT_KS: [usize; 3] = [1, 5, 10];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub tau_b: f64,
    pub spearman_rho: f64,
    pub map: f64,
    pub mrr: f64,
    pub precision_at_k: BTreeMap<usize, f64>,
}

/// Per-query metrics where each correlation may be undefined.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryMetrics {
    pub tau_b: Result<f64>,
    pub spearman_rho: Result<f64>,
    pub average_precision: Result<f64>,
    pub first_relevant: Option<u32>,
    pub precision_at_k: BTreeMap<usize, f64>,
}

/// Computes every metric for one query without failing on undefined ones.
pub fn query_metrics(
    predicted: &Ranking,
    truth: &[(String, u8)],
    relevance_threshold: u8,
    ks: &[usize],
) -> Result<QueryMetrics> {
    let truth_grades: HashMap<&str, u8> = truth.iter().map(|(d, g)| (d.as_str(), *g)).collect();
    if truth_grades.len() != truth.len() {
        let mut seen = BTreeSet::new();
        for (d, _) in truth {
            if !seen.insert(d.as_str()) {
                return Err(MetricError::DuplicateDoc(d.clone()));
            }
        }
    }
    let mut seen = BTreeSet::new();
    for e in &predicted.entries {
        if !seen.insert(e.doc_id.as_str()) {
            return Err(MetricError::DuplicateDoc(e.doc_id.clone()));
        }
        if !truth_grades.contains_key(e.doc_id.as_str()) {
            return Err(MetricError::DocSetMismatch { doc_id: e.doc_id.clone(), side: "missing from truth" });
        }
    }
    if let Some((d, _)) = truth.iter().find(|(d, _)| !seen.contains(d.as_str())) {
        return Err(MetricError::DocSetMismatch { doc_id: d.clone(), side: "missing from prediction" });
    }

    let grades: Vec<f64> = predicted
        .entries
        .iter()
        .map(|e| truth_grades[e.doc_id.as_str()] as f64)
        .collect();
    let truth_ranks: Vec<f64> = assign_competition_ranks(&grades)?.into_iter().map(f64::from).collect();
    let pred_ranks: Vec<f64> = predicted.entries.iter().map(|e| e.rank as f64).collect();

    let relevant: BTreeSet<String> = truth
        .iter()
        .filter(|(_, g)| *g >= relevance_threshold)
        .map(|(d, _)| d.clone())
        .collect();
    let ids = predicted.doc_ids();
    Ok(QueryMetrics {
        tau_b: kendall_tau_b(&pred_ranks, &truth_ranks),
        spearman_rho: spearman_rho(&pred_ranks, &truth_ranks),
        average_precision: average_precision(&ids, &relevant),
        first_relevant: first_relevant_rank(&ids, &relevant),
        precision_at_k: ks.iter().map(|&k| (k, precision_at_k(&ids, &relevant, k))).collect(),
    })
}

/// Evaluates one predicted ranking against graded truth; any undefined
/// metric is an error.
pub fn evaluate_ranking(
    predicted: &Ranking,
    truth: &[(String, u8)],
    relevance_threshold: u8,
    ks: &[usize],
) -> Result<MetricReport> {
    let m = query_metrics(predicted, truth, relevance_threshold, ks)?;
    Ok(MetricReport {
        tau_b: m.tau_b?,
        spearman_rho: m.spearman_rho?,
        map: m.average_precision?,
        mrr: m.first_relevant.map_or(0.0, |r| 1.0 / r as f64),
        precision_at_k: m.precision_at_k,
    })
}

/// Macro-averaged metrics over many queries, with counts of queries for
/// which a metric was undefined and therefore left out of its average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub report: MetricReport,
    pub queries: usize,
    pub undefined_tau_b: usize,
    pub undefined_spearman: usize,
    pub undefined_average_precision: usize,
    /// Candidates scored without being part of the BM25 index.
    #[serde(default)]
    pub unindexed_candidates: usize,
}

fn mean_defined(values: &[f64], metric: &'static str) -> Result<f64> {
    if values.is_empty() {
        return Err(MetricError::Undefined { metric, reason: "undefined for every query" });
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

pub fn aggregate(per_query: &[QueryMetrics], ks: &[usize]) -> Result<AggregateReport> {
    if per_query.is_empty() {
        return Err(MetricError::Undefined { metric: "aggregate", reason: "no queries" });
    }
    let taus: Vec<f64> = per_query.iter().filter_map(|m| m.tau_b.clone().ok()).collect();
    let rhos: Vec<f64> = per_query.iter().filter_map(|m| m.spearman_rho.clone().ok()).collect();
    let aps: Vec<f64> = per_query.iter().filter_map(|m| m.average_precision.clone().ok()).collect();
    let firsts: Vec<Option<u32>> = per_query.iter().map(|m| m.first_relevant).collect();
    let n = per_query.len() as f64;
    let precision_at_k = ks
        .iter()
        .map(|k| {
            let sum: f64 = per_query.iter().map(|m| m.precision_at_k.get(k).copied().unwrap_or(0.0)).sum();
            (*k, sum / n)
        })
        .collect();
    Ok(AggregateReport {
        report: MetricReport {
            tau_b: mean_defined(&taus, "kendall_tau_b")?,
            spearman_rho: mean_defined(&rhos, "spearman_rho")?,
            map: mean_average_precision(&aps)?,
            mrr: mean_reciprocal_rank(&firsts)?,
            precision_at_k,
        },
        queries: per_query.len(),
        undefined_tau_b: per_query.len() - taus.len(),
        undefined_spearman: per_query.len() - rhos.len(),
        undefined_average_precision: per_query.len() - aps.len(),
        unindexed_candidates: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(ids: &[&str]) -> BTreeSet<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn competition_ranks_examples() {
        assert_eq!(assign_competition_ranks(&[0.9, 0.9, 0.5]).unwrap(), vec![1, 1, 3]);
        assert_eq!(assign_competition_ranks(&[5.0]).unwrap(), vec![1]);
        assert_eq!(assign_competition_ranks(&[2.0, 2.0, 2.0, 1.0, 0.0]).unwrap(), vec![1, 1, 1, 4, 5]);
        // input order is preserved
        assert_eq!(assign_competition_ranks(&[0.0, 2.0, 1.0, 2.0]).unwrap(), vec![4, 1, 3, 1]);
        assert!(assign_competition_ranks(&[]).unwrap().is_empty());
    }

    #[test]
    fn competition_ranks_reject_nan() {
        assert_eq!(
            assign_competition_ranks(&[1.0, f64::NAN]),
            Err(MetricError::NonFiniteScore { position: 1 })
        );
    }

    #[test]
    fn pair_count_examples() {
        let c = pair_counts(&[1.0, 2.0], &[1.0, 2.0]).unwrap();
        assert_eq!(c, TieCounts { concordant: 1, ..Default::default() });
        let c = pair_counts(&[1.0, 2.0], &[2.0, 1.0]).unwrap();
        assert_eq!(c, TieCounts { discordant: 1, ..Default::default() });
        let c = pair_counts(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert_eq!((c.concordant, c.discordant, c.total()), (5, 1, 6));
        assert!(matches!(pair_counts(&[1.0], &[1.0, 2.0]), Err(MetricError::LengthMismatch { .. })));
    }

    #[test]
    fn tau_b_examples() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let r = [5.0, 4.0, 3.0, 2.0, 1.0];
        assert_eq!(kendall_tau_b(&a, &a).unwrap(), 1.0);
        assert_eq!(kendall_tau_b(&a, &r).unwrap(), -1.0);
        let t = kendall_tau_b(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((t - 2.0 / 3.0).abs() < 1e-15);
        assert!(matches!(
            kendall_tau_b(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(MetricError::Undefined { .. })
        ));
    }

    #[test]
    fn spearman_examples() {
        assert_eq!(spearman_rho(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(spearman_rho(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
        let r = spearman_rho(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap();
        assert!((r - 0.5).abs() < 1e-15);
        assert!(matches!(spearman_rho(&[2.0, 2.0], &[1.0, 2.0]), Err(MetricError::Undefined { .. })));
    }

    #[test]
    fn fractional_ranks_average_ties() {
        assert_eq!(fractional_ranks(&[10.0, 20.0, 20.0, 5.0]).unwrap(), vec![2.0, 3.5, 3.5, 1.0]);
    }

    #[test]
    fn precision_examples() {
        let rel = set(&["a", "c"]);
        assert_eq!(precision_at_k(&["a", "c"], &rel, 2), 1.0);
        assert!((precision_at_k(&["a", "b", "c"], &rel, 3) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(precision_at_k(&["a", "b"], &BTreeSet::new(), 2), 0.0);
        // k capped at list length
        assert_eq!(precision_at_k(&["a"], &rel, 10), 1.0);
    }

    #[test]
    fn average_precision_examples() {
        let rel = set(&["a", "c"]);
        assert_eq!(average_precision(&["a", "c"], &rel).unwrap(), 1.0);
        let ap = average_precision(&["a", "b", "c"], &rel).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(average_precision(&["x", "y"], &rel).unwrap(), 0.0);
        assert!(average_precision(&["a"], &BTreeSet::new()).is_err());
    }

    #[test]
    fn map_and_mrr_examples() {
        assert_eq!(mean_average_precision(&[1.0]).unwrap(), 1.0);
        assert_eq!(mean_average_precision(&[1.0, 0.0]).unwrap(), 0.5);
        assert!((mean_average_precision(&[5.0 / 6.0, 0.5]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(mean_average_precision(&[]).is_err());
        assert_eq!(mean_reciprocal_rank(&[Some(1), Some(1)]).unwrap(), 1.0);
        assert!((mean_reciprocal_rank(&[Some(3)]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(mean_reciprocal_rank(&[Some(1), Some(4)]).unwrap(), 0.625);
        assert_eq!(mean_reciprocal_rank(&[None, Some(1)]).unwrap(), 0.5);
        assert!(mean_reciprocal_rank(&[]).is_err());
    }

    fn truth(grades: &[(&str, u8)]) -> Vec<(String, u8)> {
        grades.iter().map(|(d, g)| (d.to_string(), *g)).collect()
    }

    #[test]
    fn evaluate_identical_and_reversed() {
        let t = truth(&[("a", 3), ("b", 2), ("c", 1), ("d", 0)]);
        let same = Ranking::from_scores("q", vec![("a".into(), 4.0), ("b".into(), 3.0), ("c".into(), 2.0), ("d".into(), 1.0)]).unwrap();
        let r = evaluate_ranking(&same, &t, 1, &DEFAULT_KS).unwrap();
        assert_eq!((r.tau_b, r.spearman_rho, r.map, r.mrr), (1.0, 1.0, 1.0, 1.0));
        let rev = Ranking::from_scores("q", vec![("a".into(), 1.0), ("b".into(), 2.0), ("c".into(), 3.0), ("d".into(), 4.0)]).unwrap();
        let r = evaluate_ranking(&rev, &t, 1, &DEFAULT_KS).unwrap();
        assert_eq!(r.tau_b, -1.0);
        assert_eq!(r.spearman_rho, -1.0);
        assert_eq!(r.mrr, 0.5);
    }

    #[test]
    fn evaluate_rejects_mismatched_doc_sets() {
        let t = truth(&[("a", 1), ("b", 0)]);
        let p = Ranking::from_scores("q", vec![("a".into(), 1.0), ("z".into(), 0.0)]).unwrap();
        assert!(matches!(evaluate_ranking(&p, &t, 1, &[1]), Err(MetricError::DocSetMismatch { .. })));
        let p = Ranking::from_scores("q", vec![("a".into(), 1.0)]).unwrap();
        assert!(matches!(evaluate_ranking(&p, &t, 1, &[1]), Err(MetricError::DocSetMismatch { .. })));
    }

    #[test]
    fn ranking_from_scores_breaks_ties_by_doc_id() {
        let r = Ranking::from_scores("q", vec![("b".into(), 1.0), ("a".into(), 1.0), ("c".into(), 2.0)]).unwrap();
        assert_eq!(r.doc_ids(), vec!["c", "a", "b"]);
        assert_eq!(r.entries.iter().map(|e| e.rank).collect::<Vec<_>>(), vec![1, 2, 2]);
    }

    #[test]
    fn aggregate_skips_undefined_correlations() {
        let t_tied = truth(&[("a", 1), ("b", 1)]);
        let t_ok = truth(&[("a", 2), ("b", 0)]);
        let p = Ranking::from_scores("q", vec![("a".into(), 2.0), ("b".into(), 1.0)]).unwrap();
        let m1 = query_metrics(&p, &t_tied, 1, &[1]).unwrap();
        let m2 = query_metrics(&p, &t_ok, 1, &[1]).unwrap();
        assert!(m1.tau_b.is_err());
        let agg = aggregate(&[m1, m2], &[1]).unwrap();
        assert_eq!(agg.undefined_tau_b, 1);
        assert_eq!(agg.report.tau_b, 1.0);
        assert_eq!(agg.report.map, 1.0);
    }
}
