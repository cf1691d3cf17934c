use std::fmt;

use serde::{Deserialize, Serialize};

/// Identifier of a simulated process, unique within one run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProcessId(pub u64);

impl ProcessId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ProcessId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

impl From<u64> for ProcessId {
    fn from(id: u64) -> Self {
        ProcessId(id)
    }
}

/// Identity of a broadcast message: its origin and the origin's broadcast
/// counter. Counters start at 1 and increase strictly per origin.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MessageId {
    pub origin: ProcessId,
    pub counter: u64,
}

impl MessageId {
    pub fn new(origin: ProcessId, counter: u64) -> Self {
        MessageId { origin, counter }
    }
}

impl fmt::Display for MessageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.origin, self.counter)
    }
}

/// Per-process source of fresh message identifiers.
#[derive(Clone, Debug)]
pub struct IdGenerator {
    me: ProcessId,
    last: u64,
}

impl IdGenerator {
    pub fn new(me: ProcessId) -> Self {
        IdGenerator { me, last: 0 }
    }

    pub fn next_message_id(&mut self) -> MessageId {
        self.last += 1;
        MessageId::new(self.me, self.last)
    }

    pub fn issued(&self) -> u64 {
        self.last
    }
}
