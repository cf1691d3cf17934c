use std::collections::BTreeMap;

use bytes::Bytes;
use serde::{Deserialize, Serialize};

use super::ids::{MessageId, ProcessId};

/// Sparse vector clock carried by the vector-clock baseline. Entries that
/// are absent read as zero.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VectorClock(BTreeMap<ProcessId, u64>);

impl VectorClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, p: ProcessId) -> u64 {
        self.0.get(&p).copied().unwrap_or(0)
    }

    pub fn set(&mut self, p: ProcessId, value: u64) {
        if value == 0 {
            self.0.remove(&p);
        } else {
            self.0.insert(p, value);
        }
    }

    pub fn increment(&mut self, p: ProcessId) -> u64 {
        let next = self.get(p) + 1;
        self.0.insert(p, next);
        next
    }

    pub fn entries(&self) -> impl Iterator<Item = (ProcessId, u64)> + '_ {
        self.0.iter().map(|(p, c)| (*p, *c))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// A broadcast message. Its identifier is the only control information it
/// carries.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Payload {
    pub id: MessageId,
    pub body: Bytes,
}

/// Ping and pong records share one shape: the process running the ping
/// phase, the target of the new link, and the phase number.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PhaseTag {
    pub from: ProcessId,
    pub to: ProcessId,
    pub phase: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ProtocolMessage {
    Payload(Payload),
    Ping(PhaseTag),
    Pong(PhaseTag),
    VcPayload { payload: Payload, clock: VectorClock },
}

pub const TAG_BYTES: usize = 1;
pub const MESSAGE_ID_BYTES: usize = 16;
pub const PHASE_TAG_BYTES: usize = 24;
pub const CLOCK_ENTRY_BYTES: usize = 16;

const TAG_PAYLOAD: u8 = 1;
const TAG_PING: u8 = 2;
const TAG_PONG: u8 = 3;
const TAG_VC_PAYLOAD: u8 = 4;

impl ProtocolMessage {
    pub fn payload_id(&self) -> Option<MessageId> {
        match self {
            ProtocolMessage::Payload(p) => Some(p.id),
            ProtocolMessage::VcPayload { payload, .. } => Some(payload.id),
            _ => None,
        }
    }

    pub fn is_payload(&self) -> bool {
        self.payload_id().is_some()
    }

    /// Bytes spent on everything except the application body under the
    /// canonical encoding.
    pub fn serialized_control_size(&self) -> usize {
        match self {
            ProtocolMessage::Payload(_) => TAG_BYTES + MESSAGE_ID_BYTES,
            ProtocolMessage::Ping(_) | ProtocolMessage::Pong(_) => TAG_BYTES + PHASE_TAG_BYTES,
            ProtocolMessage::VcPayload { clock, .. } => TAG_BYTES + MESSAGE_ID_BYTES + CLOCK_ENTRY_BYTES * clock.len(),
        }
    }

    /// Canonical encoding: one tag byte, then big-endian fixed-width
    /// integers. Payload bodies follow their header verbatim; vector-clock
    /// entries are (process, counter) pairs in process order, and a
    /// trailing entry-count word frames the body. That framing word is not
    /// counted as control overhead.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.serialized_control_size() + 16);
        match self {
            ProtocolMessage::Payload(p) => {
                out.push(TAG_PAYLOAD);
                put_id(&mut out, p.id);
                out.extend_from_slice(&p.body);
            }
            ProtocolMessage::Ping(t) | ProtocolMessage::Pong(t) => {
                out.push(if matches!(self, ProtocolMessage::Ping(_)) {
                    TAG_PING
                } else {
                    TAG_PONG
                });
                out.extend_from_slice(&t.from.0.to_be_bytes());
                out.extend_from_slice(&t.to.0.to_be_bytes());
                out.extend_from_slice(&t.phase.to_be_bytes());
            }
            ProtocolMessage::VcPayload { payload, clock } => {
                out.push(TAG_VC_PAYLOAD);
                put_id(&mut out, payload.id);
                for (p, c) in clock.entries() {
                    out.extend_from_slice(&p.0.to_be_bytes());
                    out.extend_from_slice(&c.to_be_bytes());
                }
                out.extend_from_slice(&payload.body);
                out.extend_from_slice(&(clock.len() as u64).to_be_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<ProtocolMessage, DecodeError> {
        let (&tag, rest) = bytes.split_first().ok_or(DecodeError::Empty)?;
        match tag {
            TAG_PAYLOAD => {
                let id = take_id(rest)?;
                Ok(ProtocolMessage::Payload(Payload {
                    id,
                    body: Bytes::copy_from_slice(&rest[MESSAGE_ID_BYTES..]),
                }))
            }
            TAG_PING | TAG_PONG => {
                if rest.len() != PHASE_TAG_BYTES {
                    return Err(DecodeError::Length(rest.len()));
                }
                let t = PhaseTag {
                    from: ProcessId(word(rest, 0)),
                    to: ProcessId(word(rest, 8)),
                    phase: word(rest, 16),
                };
                Ok(if tag == TAG_PING {
                    ProtocolMessage::Ping(t)
                } else {
                    ProtocolMessage::Pong(t)
                })
            }
            TAG_VC_PAYLOAD => {
                let id = take_id(rest)?;
                if rest.len() < MESSAGE_ID_BYTES + 8 {
                    return Err(DecodeError::Length(rest.len()));
                }
                let count = word(rest, rest.len() - 8) as usize;
                let entries_end = count
                    .checked_mul(CLOCK_ENTRY_BYTES)
                    .and_then(|n| n.checked_add(MESSAGE_ID_BYTES))
                    .filter(|&end| end + 8 <= rest.len())
                    .ok_or(DecodeError::Length(rest.len()))?;
                let mut clock = VectorClock::new();
                for i in 0..count {
                    let at = MESSAGE_ID_BYTES + i * CLOCK_ENTRY_BYTES;
                    clock.set(ProcessId(word(rest, at)), word(rest, at + 8));
                }
                let body = Bytes::copy_from_slice(&rest[entries_end..rest.len() - 8]);
                Ok(ProtocolMessage::VcPayload {
                    payload: Payload { id, body },
                    clock,
                })
            }
            other => Err(DecodeError::Tag(other)),
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("empty message")]
    Empty,
    #[error("unknown message tag {0}")]
    Tag(u8),
    #[error("truncated message ({0} bytes after tag)")]
    Length(usize),
}

fn put_id(out: &mut Vec<u8>, id: MessageId) {
    out.extend_from_slice(&id.origin.0.to_be_bytes());
    out.extend_from_slice(&id.counter.to_be_bytes());
}

fn take_id(rest: &[u8]) -> Result<MessageId, DecodeError> {
    if rest.len() < MESSAGE_ID_BYTES {
        return Err(DecodeError::Length(rest.len()));
    }
    Ok(MessageId::new(ProcessId(word(rest, 0)), word(rest, 8)))
}

fn word(bytes: &[u8], at: usize) -> u64 {
    let mut buf = [0u8; 8];
    buf.copy_from_slice(&bytes[at..at + 8]);
    u64::from_be_bytes(buf)
}
