use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CallKind {
    Chat,
    Embed,
}

#[derive(Debug, Default)]
struct Counters {
    requests: AtomicU64,
    retries: AtomicU64,
    failures: AtomicU64,
    prompt_tokens: AtomicU64,
    completion_tokens: AtomicU64,
}

impl Counters {
    fn snapshot(&self) -> CounterSnapshot {
        CounterSnapshot {
            requests: self.requests.load(Ordering::Relaxed),
            retries: self.retries.load(Ordering::Relaxed),
            failures: self.failures.load(Ordering::Relaxed),
            prompt_tokens: self.prompt_tokens.load(Ordering::Relaxed),
            completion_tokens: self.completion_tokens.load(Ordering::Relaxed),
        }
    }
}

/// Monotone call accounting, safe to update from many threads.
#[derive(Debug, Default)]
pub struct CallLedger {
    chat: Counters,
    embed: Counters,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterSnapshot {
    pub requests: u64,
    pub retries: u64,
    pub failures: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerSummary {
    pub chat: CounterSnapshot,
    pub embed: CounterSnapshot,
}

impl CallLedger {
    fn counters(&self, kind: CallKind) -> &Counters {
        match kind {
            CallKind::Chat => &self.chat,
            CallKind::Embed => &self.embed,
        }
    }

    pub fn record_request(&self, kind: CallKind) {
        self.counters(kind).requests.fetch_add(1, Ordering::Relaxed);
    }

    pub fn record_retry(&self, kind: CallKind) {
        self.counters(kind).retries.fetch_add(1, Ordering::Relaxed);
    }

    pub fn record_failure(&self, kind: CallKind) {
        self.counters(kind).failures.fetch_add(1, Ordering::Relaxed);
    }

    pub fn record_tokens(&self, kind: CallKind, prompt: u64, completion: u64) {
        let c = self.counters(kind);
        c.prompt_tokens.fetch_add(prompt, Ordering::Relaxed);
        c.completion_tokens.fetch_add(completion, Ordering::Relaxed);
    }

    pub fn summary(&self) -> LedgerSummary {
        LedgerSummary { chat: self.chat.snapshot(), embed: self.embed.snapshot() }
    }
}
