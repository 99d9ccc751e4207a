//! Candidate reranking by embedding similarity, single-candidate LLM
//! scoring, or pairwise LLM comparison, with optional expert instructions
//! injected into the prompts.

mod parse;
mod prompt;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Document;
use crate::gateway::{fan_out, Gateway, GatewayError};
use crate::metrics::{MetricError, Ranking};
use crate::sha256_hex;

pub use parse::{parse_score, parse_verdict, ParsedScore, ParsedVerdict, ReplyError};
pub use prompt::{
    PromptTemplate, PromptTemplates, PromptVars, TemplateError, TemplateKind, PAIRWISE_TEMPLATE_FILE,
    SINGLE_TEMPLATE_FILE,
};

pub const DEFAULT_MAX_CANDIDATES: usize = 30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RerankError {
    #[error("no candidates to rerank")]
    NoCandidates,
    #[error("pairwise scoring needs at least two candidates, got {0}")]
    TooFewCandidates(usize),
    #[error("{got} candidates exceed the limit of {max}")]
    TooManyCandidates { got: usize, max: usize },
    #[error("candidate {0} appears twice")]
    DuplicateCandidate(String),
    #[error("gateway failure for {context}: {source}")]
    Gateway {
        context: String,
        #[source]
        source: GatewayError,
    },
    #[error("embedding of {doc_id} has zero norm")]
    ZeroVector { doc_id: String },
    #[error("no candidate of query {query_id} could be scored")]
    AllUnscorable { query_id: String, failures: Vec<CandidateFailure> },
    #[error("verdict references unknown candidate {0}")]
    UnknownCandidate(String),
    #[error("verdict {0} is outside -1..=1")]
    InvalidVerdict(i8),
    #[error("invalid method: {0}")]
    InvalidMethod(String),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

pub type Result<T> = std::result::Result<T, RerankError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    ScsEmb,
    ScsLlm,
    PcsLlm,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RerankMethod {
    pub kind: MethodKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instructions: Option<String>,
    /// Version of the instructions document the text was taken from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instructions_version: Option<u64>,
}

pub const METHOD_NAMES: [&str; 5] = ["scs_emb", "scs_llm", "scs_instr", "pcs_llm", "pcs_instr"];

impl RerankMethod {
    pub fn new(kind: MethodKind) -> Self {
        Self { kind, instructions: None, instructions_version: None }
    }

    pub fn with_instructions(mut self, text: impl Into<String>, version: Option<u64>) -> Result<Self> {
        self.instructions = Some(text.into());
        self.instructions_version = version;
        self.validate()?;
        Ok(self)
    }

    /// Builds a method from its name. The `_instr` variants take the
    /// instructions text; the others must not be given any.
    pub fn named(name: &str, instructions: Option<(&str, Option<u64>)>) -> Result<Self> {
        let (kind, wants_instructions) = match name {
            "scs_emb" => (MethodKind::ScsEmb, false),
            "scs_llm" => (MethodKind::ScsLlm, false),
            "scs_instr" => (MethodKind::ScsLlm, true),
            "pcs_llm" => (MethodKind::PcsLlm, false),
            "pcs_instr" => (MethodKind::PcsLlm, true),
            other => {
                return Err(RerankError::InvalidMethod(format!(
                    "unknown method `{other}`, expected one of {}",
                    METHOD_NAMES.join(", ")
                )))
            }
        };
        match (wants_instructions, instructions) {
            (false, None) => Ok(Self::new(kind)),
            (true, Some((text, version))) => Self::new(kind).with_instructions(text, version),
            (true, None) => Err(RerankError::InvalidMethod(format!("`{name}` needs instructions"))),
            (false, Some(_)) => Err(RerankError::InvalidMethod(format!(
                "`{name}` takes no instructions; use the _instr variant"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.instructions {
            Some(t) if t.trim().is_empty() => Err(RerankError::InvalidMethod("instructions are empty".into())),
            Some(_) if self.kind == MethodKind::ScsEmb => {
                Err(RerankError::InvalidMethod("embedding scoring cannot use instructions".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match (self.kind, self.instructions.is_some()) {
            (MethodKind::ScsEmb, _) => "scs_emb",
            (MethodKind::ScsLlm, false) => "scs_llm",
            (MethodKind::ScsLlm, true) => "scs_instr",
            (MethodKind::PcsLlm, false) => "pcs_llm",
            (MethodKind::PcsLlm, true) => "pcs_instr",
        }
    }

    pub fn is_pairwise(&self) -> bool {
        self.kind == MethodKind::PcsLlm
    }
}

impl fmt::Display for RerankMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub doc_id: String,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

/// A candidate whose reply could not be read, left out of the ranking.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateFailure {
    pub doc_id: String,
    pub reason: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply: Option<String>,
}

/// Verdict on the ordered pair: +1 when `doc_first` is the better match,
/// -1 when it is the worse one, 0 when equal or uncertain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairVerdict {
    pub doc_first: String,
    pub doc_second: String,
    pub verdict: i8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanation: Option<String>,
    /// The reply could not be read and the verdict defaulted to 0.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub parse_failed: bool,
}

impl PairVerdict {
    pub fn new(first: impl Into<String>, second: impl Into<String>, verdict: i8) -> Self {
        Self { doc_first: first.into(), doc_second: second.into(), verdict, explanation: None, parse_failed: false }
    }
}

/// Sums pairwise verdicts into per-candidate totals: each ordered verdict
/// `(a, b, v)` adds `v` to `a` and subtracts it from `b`. Every listed
/// candidate gets a total, zero if it never appears.
pub fn aggregate_pair_verdicts<S: AsRef<str>>(
    candidates: &[S],
    verdicts: &[PairVerdict],
) -> Result<BTreeMap<String, i64>> {
    let mut totals: BTreeMap<String, i64> = candidates.iter().map(|c| (c.as_ref().to_string(), 0)).collect();
    for v in verdicts {
        if !(-1..=1).contains(&v.verdict) {
            return Err(RerankError::InvalidVerdict(v.verdict));
        }
        for (doc, delta) in [(&v.doc_first, v.verdict as i64), (&v.doc_second, -(v.verdict as i64))] {
            *totals.get_mut(doc.as_str()).ok_or_else(|| RerankError::UnknownCandidate(doc.clone()))? += delta;
        }
    }
    Ok(totals)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankResult {
    /// Content hash of the result, stable across runs with equal output.
    pub result_id: String,
    pub query_id: String,
    pub method: RerankMethod,
    /// Scored candidates in input order; for pairwise methods the score is
    /// the aggregated verdict total.
    pub scores: Vec<CandidateScore>,
    pub ranking: Ranking,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub verdicts: Vec<PairVerdict>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<CandidateFailure>,
}

impl RerankResult {
    pub fn from_parts(
        query_id: impl Into<String>,
        method: RerankMethod,
        scores: Vec<CandidateScore>,
        verdicts: Vec<PairVerdict>,
        failures: Vec<CandidateFailure>,
    ) -> Result<Self> {
        let query_id = query_id.into();
        let ranking = ranking_from(&query_id, &scores)?;
        let id_input = serde_json::json!([&query_id, &method, &scores, &verdicts, &failures]);
        let result_id = sha256_hex(id_input.to_string().as_bytes())[..16].to_string();
        Ok(Self { result_id, query_id, method, scores, ranking, verdicts, failures })
    }

    /// Recomputes the ranking from the stored scores.
    pub fn derive_ranking(&self) -> Result<Ranking> {
        ranking_from(&self.query_id, &self.scores)
    }

    pub fn flagged_verdicts(&self) -> usize {
        self.verdicts.iter().filter(|v| v.parse_failed).count()
    }
}

fn ranking_from(query_id: &str, scores: &[CandidateScore]) -> Result<Ranking> {
    Ok(Ranking::from_scores(query_id, scores.iter().map(|s| (s.doc_id.clone(), s.score)).collect())?)
}

pub fn write_results<W: Write>(results: &[RerankResult], mut out: W) -> std::io::Result<()> {
    for r in results {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_results<R: BufRead>(input: R) -> std::io::Result<Vec<RerankResult>> {
    let mut out = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: RerankResult = serde_json::from_str(&line).map_err(|e| {
            std::io::Error::new(std::io::ErrorKind::InvalidData, format!("line {}: {e}", idx + 1))
        })?;
        out.push(r);
    }
    Ok(out)
}

pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() {
        return None;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((dot / (na * nb).sqrt()).clamp(-1.0, 1.0))
}

/// Successful single-candidate scoring plus the candidates whose replies
/// could not be read.
#[derive(Debug, Clone, PartialEq)]
pub struct ScsOutcome {
    pub scores: Vec<CandidateScore>,
    pub failures: Vec<CandidateFailure>,
}

/// Runs reranking methods against one gateway and template set.
pub struct Reranker<'a> {
    gateway: &'a Gateway,
    templates: &'a PromptTemplates,
    max_candidates: usize,
}

impl<'a> Reranker<'a> {
    pub fn new(gateway: &'a Gateway, templates: &'a PromptTemplates) -> Self {
        Self { gateway, templates, max_candidates: DEFAULT_MAX_CANDIDATES }
    }

    pub fn with_max_candidates(mut self, max: usize) -> Self {
        self.max_candidates = max;
        self
    }

    pub fn single_prompt(&self, query: &Document, candidate: &Document, method: &RerankMethod) -> String {
        self.templates.single.render(&PromptVars {
            query: &query.text,
            candidate: &candidate.text,
            instructions: method.instructions.as_deref(),
            ..Default::default()
        })
    }

    pub fn pair_prompt(&self, query: &Document, first: &Document, second: &Document, method: &RerankMethod) -> String {
        self.templates.pairwise.render(&PromptVars {
            query: &query.text,
            candidate_a: &first.text,
            candidate_b: &second.text,
            instructions: method.instructions.as_deref(),
            ..Default::default()
        })
    }

    fn check_candidates(&self, candidates: &[&Document]) -> Result<()> {
        if candidates.is_empty() {
            return Err(RerankError::NoCandidates);
        }
        if candidates.len() > self.max_candidates {
            return Err(RerankError::TooManyCandidates { got: candidates.len(), max: self.max_candidates });
        }
        let mut seen = BTreeSet::new();
        for c in candidates {
            if !seen.insert(c.id.as_str()) {
                return Err(RerankError::DuplicateCandidate(c.id.clone()));
            }
        }
        Ok(())
    }

    pub fn scs_embed(&self, query: &Document, candidates: &[&Document]) -> Result<Vec<CandidateScore>> {
        self.check_candidates(candidates)?;
        let gateway_err = |id: &str| {
            let id = id.to_string();
            move |source| RerankError::Gateway { context: format!("embedding of {id}"), source }
        };
        let q = self.gateway.embed(&query.text).map_err(gateway_err(&query.id))?;
        let vectors = fan_out(candidates, self.gateway.parallelism(), |c| self.gateway.embed(&c.text));
        candidates
            .iter()
            .zip(vectors)
            .map(|(c, v)| {
                let v = v.map_err(gateway_err(&c.id))?;
                let score = cosine(&q, &v).ok_or_else(|| RerankError::ZeroVector { doc_id: c.id.clone() })?;
                Ok(CandidateScore { doc_id: c.id.clone(), score, explanation: None, warning: None })
            })
            .collect()
    }

    pub fn scs_llm(&self, query: &Document, candidates: &[&Document], method: &RerankMethod) -> Result<ScsOutcome> {
        self.check_candidates(candidates)?;
        method.validate()?;
        let replies = fan_out(candidates, self.gateway.parallelism(), |c| {
            self.gateway.complete(&self.single_prompt(query, c, method))
        });
        let mut outcome = ScsOutcome { scores: Vec::new(), failures: Vec::new() };
        for (c, reply) in candidates.iter().zip(replies) {
            let reply = reply.map_err(|source| RerankError::Gateway { context: format!("candidate {}", c.id), source })?;
            match parse_score(&reply) {
                Ok(p) => outcome.scores.push(CandidateScore {
                    doc_id: c.id.clone(),
                    score: p.score,
                    explanation: p.explanation,
                    warning: p.clamped_from.map(|v| {
                        log::warn!("candidate {}: score {v} clamped to [-1, 1]", c.id);
                        format!("score {v} clamped to [-1, 1]")
                    }),
                }),
                Err(e) => {
                    log::warn!("candidate {}: {e}", c.id);
                    outcome.failures.push(CandidateFailure {
                        doc_id: c.id.clone(),
                        reason: e.to_string(),
                        reply: Some(reply),
                    });
                }
            }
        }
        Ok(outcome)
    }

    /// Compares every ordered pair of distinct candidates.
    pub fn pcs_llm(&self, query: &Document, candidates: &[&Document], method: &RerankMethod) -> Result<Vec<PairVerdict>> {
        self.check_candidates(candidates)?;
        method.validate()?;
        if candidates.len() < 2 {
            return Err(RerankError::TooFewCandidates(candidates.len()));
        }
        let pairs: Vec<(&Document, &Document)> = candidates
            .iter()
            .flat_map(|a| candidates.iter().filter(move |b| b.id != a.id).map(move |b| (*a, *b)))
            .collect();
        let replies = fan_out(&pairs, self.gateway.parallelism(), |(a, b)| {
            self.gateway.complete(&self.pair_prompt(query, a, b, method))
        });
        pairs
            .iter()
            .zip(replies)
            .map(|((a, b), reply)| {
                let reply = reply.map_err(|source| RerankError::Gateway {
                    context: format!("pair ({}, {})", a.id, b.id),
                    source,
                })?;
                Ok(match parse_verdict(&reply) {
                    Ok(p) => PairVerdict {
                        doc_first: a.id.clone(),
                        doc_second: b.id.clone(),
                        verdict: p.verdict,
                        explanation: p.explanation,
                        parse_failed: false,
                    },
                    Err(e) => {
                        log::warn!("pair ({}, {}): {e}; treated as neutral", a.id, b.id);
                        PairVerdict {
                            doc_first: a.id.clone(),
                            doc_second: b.id.clone(),
                            verdict: 0,
                            explanation: Some(format!("unreadable reply ({e}): {}", reply.trim())),
                            parse_failed: true,
                        }
                    }
                })
            })
            .collect()
    }

    pub fn rerank(&self, query: &Document, candidates: &[&Document], method: &RerankMethod) -> Result<RerankResult> {
        method.validate()?;
        match method.kind {
            MethodKind::ScsEmb => {
                let scores = self.scs_embed(query, candidates)?;
                RerankResult::from_parts(&query.id, method.clone(), scores, Vec::new(), Vec::new())
            }
            MethodKind::ScsLlm => {
                let outcome = self.scs_llm(query, candidates, method)?;
                if outcome.scores.is_empty() {
                    return Err(RerankError::AllUnscorable { query_id: query.id.clone(), failures: outcome.failures });
                }
                RerankResult::from_parts(&query.id, method.clone(), outcome.scores, Vec::new(), outcome.failures)
            }
            MethodKind::PcsLlm => {
                let verdicts = self.pcs_llm(query, candidates, method)?;
                let ids: Vec<&str> = candidates.iter().map(|c| c.id.as_str()).collect();
                let totals = aggregate_pair_verdicts(&ids, &verdicts)?;
                let scores = ids
                    .iter()
                    .map(|id| CandidateScore {
                        doc_id: id.to_string(),
                        score: totals[*id] as f64,
                        explanation: None,
                        warning: None,
                    })
                    .collect();
                RerankResult::from_parts(&query.id, method.clone(), scores, verdicts, Vec::new())
            }
        }
    }
}
