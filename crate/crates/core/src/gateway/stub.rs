//! Offline backend: canned responses keyed by prompt hash, optional
//! programmable fallbacks, and hash-derived embeddings.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use super::GatewayError;
use crate::sha256_hex;

pub const DEFAULT_STUB_DIMENSION: usize = 64;

/// Produces a completion for prompts that have no canned fixture.
pub trait Responder: Send + Sync {
    fn respond(&self, prompt: &str) -> Result<String, GatewayError>;
}

impl<F> Responder for F
where
    F: Fn(&str) -> Result<String, GatewayError> + Send + Sync,
{
    fn respond(&self, prompt: &str) -> Result<String, GatewayError> {
        self(prompt)
    }
}

#[derive(Clone)]
pub struct StubBackend {
    completions: HashMap<String, String>,
    embeddings: HashMap<String, Vec<f64>>,
    fallback: Option<Arc<dyn Responder>>,
    seed: u64,
    dimension: usize,
}

impl std::fmt::Debug for StubBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StubBackend")
            .field("completions", &self.completions.len())
            .field("embeddings", &self.embeddings.len())
            .field("fallback", &self.fallback.is_some())
            .field("seed", &self.seed)
            .finish()
    }
}

impl Default for StubBackend {
    fn default() -> Self {
        Self {
            completions: HashMap::new(),
            embeddings: HashMap::new(),
            fallback: None,
            seed: 0,
            dimension: DEFAULT_STUB_DIMENSION,
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum FixtureLine {
    Completion {
        #[serde(alias = "prompt_hash")]
        prompt_sha256: String,
        response: String,
    },
    RawCompletion {
        prompt: String,
        response: String,
    },
    Embedding {
        #[serde(alias = "text_hash")]
        text_sha256: String,
        embedding: Vec<f64>,
    },
}

impl StubBackend {
    pub fn new() -> Self {
        Self::default()
    }

    /// Loads fixtures from JSONL. Each line is one of
    /// `{"prompt_sha256", "response"}`, `{"prompt", "response"}` or
    /// `{"text_sha256", "embedding"}`.
    pub fn from_fixtures(path: &Path) -> Result<Self, GatewayError> {
        let file = File::open(path).map_err(|e| GatewayError::Fixture(format!("{}: {e}", path.display())))?;
        let mut stub = Self::new();
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| GatewayError::Fixture(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: FixtureLine = serde_json::from_str(&line)
                .map_err(|e| GatewayError::Fixture(format!("{}:{}: {e}", path.display(), idx + 1)))?;
            match rec {
                FixtureLine::Completion { prompt_sha256, response } => {
                    stub.completions.insert(prompt_sha256.to_lowercase(), response);
                }
                FixtureLine::RawCompletion { prompt, response } => {
                    stub.completions.insert(sha256_hex(prompt.as_bytes()), response);
                }
                FixtureLine::Embedding { text_sha256, embedding } => {
                    stub.embeddings.insert(text_sha256.to_lowercase(), embedding);
                }
            }
        }
        Ok(stub)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_dimension(mut self, dimension: usize) -> Self {
        self.dimension = dimension.max(1);
        self
    }

    pub fn with_completion(mut self, prompt: &str, response: impl Into<String>) -> Self {
        self.completions.insert(sha256_hex(prompt.as_bytes()), response.into());
        self
    }

    pub fn with_embedding(mut self, text: &str, vector: Vec<f64>) -> Self {
        self.embeddings.insert(sha256_hex(text.as_bytes()), vector);
        self
    }

    pub fn with_fallback(mut self, responder: impl Responder + 'static) -> Self {
        self.fallback = Some(Arc::new(responder));
        self
    }

    pub fn complete(&self, prompt: &str) -> Result<String, GatewayError> {
        let hash = sha256_hex(prompt.as_bytes());
        if let Some(r) = self.completions.get(&hash) {
            return Ok(r.clone());
        }
        match &self.fallback {
            Some(f) => f.respond(prompt),
            None => Err(GatewayError::StubMiss { prompt_sha256: hash }),
        }
    }

    pub fn embed(&self, text: &str) -> Vec<f64> {
        let hash = sha256_hex(text.as_bytes());
        if let Some(v) = self.embeddings.get(&hash) {
            return v.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed_from(&hash, self.seed));
        (0..self.dimension).map(|_| rng.random_range(-1.0..1.0)).collect()
    }
}

fn seed_from(hex_digest: &str, seed: u64) -> u64 {
    u64::from_str_radix(&hex_digest[..16], 16).unwrap_or(0) ^ seed
}

/// Deterministic pseudo-random replies derived from the prompt hash. The
/// reply carries both a `score` and a `verdict` so it parses under either
/// prompt family.
#[derive(Debug, Clone, Default)]
pub struct HashResponder {
    pub seed: u64,
}

impl Responder for HashResponder {
    fn respond(&self, prompt: &str) -> Result<String, GatewayError> {
        let hash = sha256_hex(prompt.as_bytes());
        let mut rng = ChaCha8Rng::seed_from_u64(seed_from(&hash, self.seed));
        let score: f64 = rng.random_range(-1.0..=1.0);
        let verdict: i8 = rng.random_range(-1..=1);
        Ok(serde_json::json!({
            "score": (score * 100.0).round() / 100.0,
            "verdict": verdict,
            "explanation": "stub reply derived from the prompt hash",
        })
        .to_string())
    }
}

/// Replays known per-candidate values. It finds which registered candidate
/// texts occur in the prompt: one match answers a single-candidate prompt
/// with that candidate's value as the score, two matches answer a pairwise
/// prompt with `sign(first - second)` where "first" is the one appearing
/// earlier in the prompt.
#[derive(Debug, Clone, Default)]
pub struct GradeOracle {
    candidates: Vec<(String, f64)>,
    /// Negate the replayed order.
    pub invert: bool,
    /// Probability of negating a pairwise verdict, decided per prompt.
    pub flip_rate: f64,
    pub seed: u64,
}

impl GradeOracle {
    pub fn new<I, S>(candidates: I) -> Self
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        Self {
            candidates: candidates.into_iter().map(|(t, v)| (t.into(), v)).collect(),
            ..Self::default()
        }
    }

    pub fn inverted(mut self) -> Self {
        self.invert = true;
        self
    }

    pub fn with_flip_rate(mut self, rate: f64, seed: u64) -> Self {
        self.flip_rate = rate;
        self.seed = seed;
        self
    }

    fn locate(&self, prompt: &str) -> Vec<(usize, f64)> {
        let mut spans: Vec<(usize, usize, f64)> = self
            .candidates
            .iter()
            .filter(|(t, _)| !t.is_empty())
            .filter_map(|(t, v)| prompt.find(t.as_str()).map(|p| (p, p + t.len(), *v)))
            .collect();
        spans.sort_by_key(|s| (s.0, std::cmp::Reverse(s.1)));
        // drop matches nested inside an earlier, longer match
        let mut out: Vec<(usize, usize, f64)> = Vec::new();
        for s in spans {
            if out.last().is_some_and(|l| s.1 <= l.1) {
                continue;
            }
            out.push(s);
        }
        out.into_iter().map(|(p, _, v)| (p, v)).collect()
    }
}

impl Responder for GradeOracle {
    fn respond(&self, prompt: &str) -> Result<String, GatewayError> {
        let sign = if self.invert { -1.0 } else { 1.0 };
        match self.locate(prompt).as_slice() {
            [(_, v)] => Ok(serde_json::json!({
                "score": sign * v,
                "explanation": "replayed from known grades",
            })
            .to_string()),
            [(_, a), (_, b)] => {
                let mut verdict = (sign * (a - b)).signum() as i64;
                if a == b {
                    verdict = 0;
                }
                if self.flip_rate > 0.0 {
                    let hash = sha256_hex(prompt.as_bytes());
                    let mut rng = ChaCha8Rng::seed_from_u64(seed_from(&hash, self.seed));
                    if rng.random_bool(self.flip_rate.clamp(0.0, 1.0)) {
                        verdict = -verdict;
                    }
                }
                Ok(serde_json::json!({
                    "verdict": verdict,
                    "explanation": "replayed from known grades",
                })
                .to_string())
            }
            found => Err(GatewayError::Stub(format!(
                "expected one or two known candidates in the prompt, found {}",
                found.len()
            ))),
        }
    }
}
