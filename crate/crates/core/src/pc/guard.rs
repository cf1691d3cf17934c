//! Bookkeeping that bounds buffer sizes and the number of ping retries per
//! link, and that turns lost pongs or crashed targets into retries.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::protocol::ProcessId;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuardConfig {
    /// Largest buffer allowed per link; `None` means unbounded.
    #[serde(default)]
    pub max_size: Option<usize>,
    /// Retries allowed before a link is abandoned; `None` means unbounded.
    #[serde(default)]
    pub max_retry: Option<u32>,
    /// Virtual milliseconds before an unanswered ping phase is retried.
    /// `None` disables timers.
    #[serde(default)]
    pub timeout_ms: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RetryDecision {
    /// Start a fresh phase; `attempt` counts retries so far.
    Reopen {
        attempt: u32,
    },
    Abandon {
        attempt: u32,
    },
    /// No bookkeeping for this link.
    Untracked,
}

#[derive(Clone, Debug, Default)]
pub struct GuardState {
    config: GuardConfig,
    outstanding: HashMap<u64, ProcessId>,
    retries: BTreeMap<ProcessId, u32>,
}

impl GuardState {
    pub fn new(config: GuardConfig) -> Self {
        GuardState {
            config,
            ..Self::default()
        }
    }

    pub fn config(&self) -> GuardConfig {
        self.config
    }

    pub fn on_ping(&mut self, peer: ProcessId, phase: u64) {
        self.retries.entry(peer).or_insert(0);
        self.outstanding.insert(phase, peer);
    }

    /// An accepted pong. Acks for phases that are no longer outstanding
    /// leave the current bookkeeping alone.
    pub fn on_ack(&mut self, peer: ProcessId, phase: u64) {
        if self.outstanding.get(&phase) == Some(&peer) {
            self.outstanding.remove(&phase);
            self.retries.remove(&peer);
        }
    }

    pub fn on_close(&mut self, peer: ProcessId) {
        self.outstanding.retain(|_, q| *q != peer);
        self.retries.remove(&peer);
    }

    pub fn is_outstanding(&self, phase: u64) -> bool {
        self.outstanding.contains_key(&phase)
    }

    /// True when appending one more message would push a buffer of length
    /// `len` past the bound.
    pub fn would_overflow(&self, len: usize) -> bool {
        self.config.max_size.is_some_and(|max| len + 1 > max)
    }

    pub fn begin_retry(&mut self, peer: ProcessId) -> RetryDecision {
        self.outstanding.retain(|_, q| *q != peer);
        let Some(count) = self.retries.get_mut(&peer) else {
            return RetryDecision::Untracked;
        };
        *count += 1;
        let attempt = *count;
        if self.config.max_retry.is_none_or(|max| attempt <= max) {
            RetryDecision::Reopen { attempt }
        } else {
            self.retries.remove(&peer);
            RetryDecision::Abandon { attempt }
        }
    }

    pub fn retry_count(&self, peer: ProcessId) -> Option<u32> {
        self.retries.get(&peer).copied()
    }

    pub fn outstanding_for(&self, peer: ProcessId) -> usize {
        self.outstanding.values().filter(|q| **q == peer).count()
    }
}
