//! Prompt templates.
//!
//! Placeholders are written `{{name}}`. A block `{{#name}} ... {{/name}}` is
//! emitted only when `name` has a non-empty value, which is how the
//! instructions paragraph disappears for the plain methods.

use std::fmt;
use std::path::Path;

use thiserror::Error;

use crate::sha256_hex;

pub const SINGLE_TEMPLATE_FILE: &str = "single.txt";
pub const PAIRWISE_TEMPLATE_FILE: &str = "pairwise.txt";

const DEFAULT_SINGLE: &str = include_str!("../../templates/single.txt");
const DEFAULT_PAIRWISE: &str = include_str!("../../templates/pairwise.txt");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TemplateError {
    #[error("{template} template: unknown placeholder `{name}`")]
    UnknownPlaceholder { template: TemplateKind, name: String },
    #[error("{template} template: placeholder `{name}` is not allowed here")]
    Misplaced { template: TemplateKind, name: String },
    #[error("{template} template: missing required placeholder `{name}`")]
    Missing { template: TemplateKind, name: &'static str },
    #[error("{template} template: unbalanced `{{{{` at byte {offset}")]
    Unbalanced { template: TemplateKind, offset: usize },
    #[error("{template} template: block `{name}` is not closed properly")]
    UnclosedBlock { template: TemplateKind, name: String },
    #[error("cannot read template {path}: {reason}")]
    Io { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemplateKind {
    Single,
    Pairwise,
}

impl fmt::Display for TemplateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TemplateKind::Single => "single",
            TemplateKind::Pairwise => "pairwise",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Query,
    Candidate,
    CandidateA,
    CandidateB,
    Instructions,
}

impl Slot {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "query" => Slot::Query,
            "candidate" => Slot::Candidate,
            "candidate_a" => Slot::CandidateA,
            "candidate_b" => Slot::CandidateB,
            "instructions" => Slot::Instructions,
            _ => return None,
        })
    }

    fn allowed_in(self, kind: TemplateKind) -> bool {
        match self {
            Slot::Query | Slot::Instructions => true,
            Slot::Candidate => kind == TemplateKind::Single,
            Slot::CandidateA | Slot::CandidateB => kind == TemplateKind::Pairwise,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Segment {
    Text(String),
    Value(Slot),
    Block(Slot, Vec<Segment>),
}

/// Values substituted into a template.
#[derive(Debug, Clone, Copy, Default)]
pub struct PromptVars<'a> {
    pub query: &'a str,
    pub candidate: &'a str,
    pub candidate_a: &'a str,
    pub candidate_b: &'a str,
    pub instructions: Option<&'a str>,
}

impl<'a> PromptVars<'a> {
    fn get(&self, slot: Slot) -> &'a str {
        match slot {
            Slot::Query => self.query,
            Slot::Candidate => self.candidate,
            Slot::CandidateA => self.candidate_a,
            Slot::CandidateB => self.candidate_b,
            Slot::Instructions => self.instructions.unwrap_or(""),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    kind: TemplateKind,
    source: String,
    segments: Vec<Segment>,
}

impl PromptTemplate {
    pub fn parse(kind: TemplateKind, source: &str) -> Result<Self, TemplateError> {
        let mut stack: Vec<(Option<Slot>, Vec<Segment>)> = vec![(None, Vec::new())];
        let mut seen: Vec<Slot> = Vec::new();
        let mut rest = source;
        let mut offset = 0;
        while let Some(open) = rest.find("{{") {
            let close = rest[open..]
                .find("}}")
                .ok_or(TemplateError::Unbalanced { template: kind, offset: offset + open })?;
            let tag = rest[open + 2..open + close].trim();
            if open > 0 {
                stack.last_mut().unwrap().1.push(Segment::Text(rest[..open].to_string()));
            }
            let (marker, name) = match tag.chars().next() {
                Some(c @ ('#' | '/')) => (Some(c), tag[1..].trim()),
                _ => (None, tag),
            };
            let slot = Slot::parse(name)
                .ok_or_else(|| TemplateError::UnknownPlaceholder { template: kind, name: name.to_string() })?;
            if !slot.allowed_in(kind) {
                return Err(TemplateError::Misplaced { template: kind, name: name.to_string() });
            }
            match marker {
                Some('#') => stack.push((Some(slot), Vec::new())),
                Some(_) => {
                    let (open_slot, body) = stack.pop().unwrap();
                    if open_slot != Some(slot) {
                        return Err(TemplateError::UnclosedBlock { template: kind, name: name.to_string() });
                    }
                    stack.last_mut().unwrap().1.push(Segment::Block(slot, body));
                }
                None => {
                    seen.push(slot);
                    stack.last_mut().unwrap().1.push(Segment::Value(slot));
                }
            }
            let mut consumed = open + close + 2;
            // a block tag swallows the newline that ends its line
            if marker.is_some() && rest[consumed..].starts_with('\n') {
                consumed += 1;
            }
            offset += consumed;
            rest = &rest[consumed..];
        }
        if !rest.is_empty() {
            stack.last_mut().unwrap().1.push(Segment::Text(rest.to_string()));
        }
        if stack.len() != 1 {
            let name = match stack.last().unwrap().0 {
                Some(Slot::Instructions) => "instructions",
                _ => "?",
            };
            return Err(TemplateError::UnclosedBlock { template: kind, name: name.into() });
        }
        let required: &[(Slot, &'static str)] = match kind {
            TemplateKind::Single => &[(Slot::Query, "query"), (Slot::Candidate, "candidate")],
            TemplateKind::Pairwise => &[
                (Slot::Query, "query"),
                (Slot::CandidateA, "candidate_a"),
                (Slot::CandidateB, "candidate_b"),
            ],
        };
        for (slot, name) in required {
            if !seen.contains(slot) {
                return Err(TemplateError::Missing { template: kind, name });
            }
        }
        Ok(Self { kind, source: source.to_string(), segments: stack.pop().unwrap().1 })
    }

    pub fn kind(&self) -> TemplateKind {
        self.kind
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn render(&self, vars: &PromptVars<'_>) -> String {
        let mut out = String::with_capacity(self.source.len() + vars.query.len() * 2);
        render_into(&self.segments, vars, &mut out);
        out
    }
}

fn render_into(segments: &[Segment], vars: &PromptVars<'_>, out: &mut String) {
    for seg in segments {
        match seg {
            Segment::Text(t) => out.push_str(t),
            Segment::Value(slot) => out.push_str(vars.get(*slot)),
            Segment::Block(slot, body) => {
                if !vars.get(*slot).is_empty() {
                    render_into(body, vars, out);
                }
            }
        }
    }
}

/// The single-candidate and pairwise templates used by a reranking run.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplates {
    pub single: PromptTemplate,
    pub pairwise: PromptTemplate,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self::from_sources(DEFAULT_SINGLE, DEFAULT_PAIRWISE).expect("bundled templates are valid")
    }
}

impl PromptTemplates {
    pub fn from_sources(single: &str, pairwise: &str) -> Result<Self, TemplateError> {
        Ok(Self {
            single: PromptTemplate::parse(TemplateKind::Single, single)?,
            pairwise: PromptTemplate::parse(TemplateKind::Pairwise, pairwise)?,
        })
    }

    /// Reads `single.txt` and `pairwise.txt` from `dir`; a missing file
    /// falls back to the bundled default.
    pub fn load_dir(dir: &Path) -> Result<Self, TemplateError> {
        let read = |name: &str, default: &str| -> Result<String, TemplateError> {
            let path = dir.join(name);
            match std::fs::read_to_string(&path) {
                Ok(s) => Ok(s),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(default.to_string()),
                Err(e) => Err(TemplateError::Io { path: path.display().to_string(), reason: e.to_string() }),
            }
        };
        Self::from_sources(
            &read(SINGLE_TEMPLATE_FILE, DEFAULT_SINGLE)?,
            &read(PAIRWISE_TEMPLATE_FILE, DEFAULT_PAIRWISE)?,
        )
    }

    /// Hash over both template sources.
    pub fn fingerprint(&self) -> String {
        let mut bytes = self.single.source.as_bytes().to_vec();
        bytes.push(0);
        bytes.extend_from_slice(self.pairwise.source.as_bytes());
        sha256_hex(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_templates_parse() {
        let t = PromptTemplates::default();
        let p = t.single.render(&PromptVars { query: "QQ", candidate: "CC", ..Default::default() });
        assert!(p.contains("QQ") && p.contains("CC"));
        assert!(!p.contains("{{"));
        assert!(!p.contains("instructions from the domain expert"));
        let p = t.pairwise.render(&PromptVars {
            query: "QQ",
            candidate_a: "AA",
            candidate_b: "BB",
            instructions: Some("prefer same phase"),
            ..Default::default()
        });
        assert!(p.find("AA").unwrap() < p.find("BB").unwrap());
        assert!(p.contains("prefer same phase"));
    }

    #[test]
    fn block_is_dropped_without_value() {
        let t = PromptTemplate::parse(TemplateKind::Single, "{{#instructions}}\nI: {{instructions}}\n{{/instructions}}\n{{query}}|{{candidate}}").unwrap();
        let with = t.render(&PromptVars { query: "q", candidate: "c", instructions: Some("x"), ..Default::default() });
        let without = t.render(&PromptVars { query: "q", candidate: "c", ..Default::default() });
        assert_eq!(with, "I: x\nq|c");
        assert_eq!(without, "q|c");
        let empty = t.render(&PromptVars { query: "q", candidate: "c", instructions: Some(""), ..Default::default() });
        assert_eq!(empty, "q|c");
    }

    #[test]
    fn values_are_not_reinterpreted() {
        let t = PromptTemplate::parse(TemplateKind::Single, "{{query}}/{{candidate}}").unwrap();
        let p = t.render(&PromptVars { query: "{{candidate}}", candidate: "c", ..Default::default() });
        assert_eq!(p, "{{candidate}}/c");
    }

    #[test]
    fn malformed_templates_are_rejected() {
        use TemplateKind::*;
        assert!(matches!(PromptTemplate::parse(Single, "{{query}} {{cand}}"), Err(TemplateError::UnknownPlaceholder { .. })));
        assert!(matches!(PromptTemplate::parse(Single, "{{query}} {{candidate_a}}"), Err(TemplateError::Misplaced { .. })));
        assert!(matches!(PromptTemplate::parse(Single, "{{query}}"), Err(TemplateError::Missing { name: "candidate", .. })));
        assert!(matches!(PromptTemplate::parse(Single, "{{query}} {{candidate"), Err(TemplateError::Unbalanced { .. })));
        assert!(matches!(
            PromptTemplate::parse(Single, "{{#instructions}}{{query}}{{candidate}}"),
            Err(TemplateError::UnclosedBlock { .. })
        ));
        assert!(matches!(PromptTemplate::parse(Pairwise, "{{query}}{{candidate_a}}"), Err(TemplateError::Missing { .. })));
    }

    #[test]
    fn load_dir_overrides_and_defaults() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join(SINGLE_TEMPLATE_FILE), "Q={{query}} C={{candidate}}").unwrap();
        let t = PromptTemplates::load_dir(dir.path()).unwrap();
        assert_eq!(t.single.source(), "Q={{query}} C={{candidate}}");
        assert_eq!(t.pairwise, PromptTemplates::default().pairwise);
        assert_ne!(t.fingerprint(), PromptTemplates::default().fingerprint());
    }
}
