use std::collections::{BTreeSet, HashMap};

use super::ids::{MessageId, ProcessId};

/// Counters received from one origin: everything up to `max_contiguous`
/// plus the out-of-order `exceptions` above it.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct OriginLog {
    pub max_contiguous: u64,
    pub exceptions: BTreeSet<u64>,
}

impl OriginLog {
    fn contains(&self, counter: u64) -> bool {
        counter <= self.max_contiguous || self.exceptions.contains(&counter)
    }

    fn insert(&mut self, counter: u64) -> bool {
        if self.contains(counter) {
            return false;
        }
        if counter == self.max_contiguous + 1 {
            self.max_contiguous = counter;
            // eager compaction keeps exceptions strictly above the prefix
            while self.exceptions.remove(&(self.max_contiguous + 1)) {
                self.max_contiguous += 1;
            }
        } else {
            self.exceptions.insert(counter);
        }
        true
    }
}

/// Duplicate-suppression set for broadcast messages, compacted per origin.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ReceivedLog {
    origins: HashMap<ProcessId, OriginLog>,
}

impl ReceivedLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn contains(&self, id: MessageId) -> bool {
        self.origins.get(&id.origin).is_some_and(|log| log.contains(id.counter))
    }

    /// Records `id`; returns true iff it had not been seen before.
    pub fn mark_received(&mut self, id: MessageId) -> bool {
        self.origins.entry(id.origin).or_default().insert(id.counter)
    }

    pub fn origin(&self, origin: ProcessId) -> Option<&OriginLog> {
        self.origins.get(&origin)
    }

    pub fn origin_count(&self) -> usize {
        self.origins.len()
    }

    /// Number of stored counters that sit outside a contiguous prefix.
    pub fn exception_count(&self) -> usize {
        self.origins.values().map(|l| l.exceptions.len()).sum()
    }

    /// Every id in the log, in (origin, counter) order.
    pub fn ids(&self) -> Vec<MessageId> {
        let mut origins: Vec<_> = self.origins.iter().collect();
        origins.sort_by_key(|(p, _)| **p);
        let mut out = Vec::new();
        for (&origin, log) in origins {
            out.extend((1..=log.max_contiguous).map(|c| MessageId::new(origin, c)));
            out.extend(log.exceptions.iter().map(|&c| MessageId::new(origin, c)));
        }
        out
    }
}
