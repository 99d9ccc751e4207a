//! Reading scores and verdicts out of model replies.
//!
//! A reply is first read as a JSON object (bare, fenced, or embedded in
//! prose). When no object with the expected key is found, the first
//! standalone number in range is taken from the raw text.

use std::sync::OnceLock;

use regex::Regex;
use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReplyError {
    #[error("no score in [-1, 1] found in reply")]
    NoScore,
    #[error("no verdict in {{-1, 0, 1}} found in reply")]
    NoVerdict,
    #[error("reply field `{field}` holds an invalid value: {value}")]
    InvalidField { field: &'static str, value: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedScore {
    pub score: f64,
    pub explanation: Option<String>,
    /// Set when the reply's score lay outside [-1, 1] and was clamped.
    pub clamped_from: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedVerdict {
    pub verdict: i8,
    pub explanation: Option<String>,
}

fn number_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[-+]?(?:\d+(?:\.\d+)?|\.\d+)").unwrap())
}

/// Standalone numbers in `text`, skipping digits glued to words such as
/// "B12" or "phase2".
fn numbers(text: &str) -> impl Iterator<Item = f64> + '_ {
    number_pattern().find_iter(text).filter_map(move |m| {
        let before = text[..m.start()].chars().next_back();
        let after = text[m.end()..].chars().next();
        let glued = |c: Option<char>| c.is_some_and(|c| c.is_alphanumeric() || c == '_');
        if glued(before) || glued(after) {
            return None;
        }
        m.as_str().parse::<f64>().ok()
    })
}

fn json_object(text: &str) -> Option<Map<String, Value>> {
    let trimmed = text.trim();
    let unfenced = trimmed
        .strip_prefix("```json")
        .or_else(|| trimmed.strip_prefix("```"))
        .and_then(|s| s.strip_suffix("```"))
        .unwrap_or(trimmed)
        .trim();
    let candidates = [Some(unfenced), text.find('{').zip(text.rfind('}')).and_then(|(a, b)| text.get(a..=b))];
    candidates
        .into_iter()
        .flatten()
        .find_map(|s| match serde_json::from_str::<Value>(s) {
            Ok(Value::Object(m)) => Some(m),
            _ => None,
        })
}

fn field_number(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
    .filter(|x: &f64| x.is_finite())
}

fn explanation_of(obj: &Map<String, Value>) -> Option<String> {
    match obj.get("explanation") {
        Some(Value::String(s)) if !s.trim().is_empty() => Some(s.trim().to_string()),
        _ => None,
    }
}

fn prose(text: &str) -> Option<String> {
    let t = text.trim();
    (!t.is_empty()).then(|| t.to_string())
}

pub fn parse_score(text: &str) -> Result<ParsedScore, ReplyError> {
    if let Some(obj) = json_object(text) {
        if let Some(raw) = obj.get("score") {
            let value = field_number(raw)
                .ok_or_else(|| ReplyError::InvalidField { field: "score", value: raw.to_string() })?;
            let score = value.clamp(-1.0, 1.0);
            return Ok(ParsedScore {
                score,
                explanation: explanation_of(&obj),
                clamped_from: (score != value).then_some(value),
            });
        }
    }
    let score = numbers(text).find(|x| (-1.0..=1.0).contains(x)).ok_or(ReplyError::NoScore)?;
    Ok(ParsedScore { score: normalize_zero(score), explanation: prose(text), clamped_from: None })
}

fn normalize_zero(x: f64) -> f64 {
    if x == 0.0 { 0.0 } else { x }
}

fn as_verdict(x: f64) -> Option<i8> {
    [-1i8, 0, 1].into_iter().find(|&v| f64::from(v) == x)
}

pub fn parse_verdict(text: &str) -> Result<ParsedVerdict, ReplyError> {
    if let Some(obj) = json_object(text) {
        if let Some(raw) = obj.get("verdict") {
            let verdict = field_number(raw)
                .and_then(as_verdict)
                .ok_or_else(|| ReplyError::InvalidField { field: "verdict", value: raw.to_string() })?;
            return Ok(ParsedVerdict { verdict, explanation: explanation_of(&obj) });
        }
    }
    let verdict = numbers(text).find_map(as_verdict).ok_or(ReplyError::NoVerdict)?;
    Ok(ParsedVerdict { verdict, explanation: prose(text) })
}
