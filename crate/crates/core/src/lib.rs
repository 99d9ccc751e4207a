//! Ranked query-by-document dataset generation.
//!
//! Candidate documents are reranked by embedding similarity, pointwise LLM
//! scoring or exhaustive pairwise LLM comparison; a human reviewer can
//! accept, correct or reject the proposed rankings; the resulting signal is
//! used to tune BM25 `{k1, b}`, which is then evaluated on held-out
//! queries with rank-correlation and precision metrics.

pub mod bm25;
pub mod corpus;
pub mod gateway;
pub mod metrics;
pub mod pipeline;
pub mod rerank;
pub mod review;
pub mod tuner;

use sha2::{Digest, Sha256};

/// Lowercase hex SHA-256 digest.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
