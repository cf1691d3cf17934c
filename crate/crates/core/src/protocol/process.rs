use std::fmt;
use std::str::FromStr;

use bytes::Bytes;
use serde::{Deserialize, Serialize};

use super::ids::{MessageId, ProcessId};
use super::message::{Payload, PhaseTag, ProtocolMessage, VectorClock};
use super::received::ReceivedLog;

/// Something a protocol handler asks its host to do.
#[derive(Clone, Debug, PartialEq)]
pub enum Effect {
    /// Send over the FIFO link to `to`.
    Send {
        to: ProcessId,
        msg: ProtocolMessage,
    },
    /// Hand a ping to the host's router, which picks one outgoing safe link
    /// leading toward the ping's target.
    RoutePing(PhaseTag),
    /// Send outside the overlay links (pongs may use any channel).
    Direct {
        to: ProcessId,
        msg: ProtocolMessage,
    },
    Deliver(MessageId),
    ArmTimeout {
        peer: ProcessId,
        phase: u64,
    },
    Control(ControlEvent),
}

pub type Outbox = Vec<Effect>;

/// Protocol-level happenings that the host records but does not act on,
/// except for the link state changes it mirrors into its safe-link graph.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum ControlEvent {
    LinkOpened { peer: ProcessId },
    PingSent { peer: ProcessId, phase: u64 },
    PongSent { peer: ProcessId, phase: u64 },
    PongDiscarded { peer: ProcessId, phase: u64 },
    BufferFlushed { peer: ProcessId, phase: u64, count: usize },
    LinkSafe { peer: ProcessId },
    LinkClosed { peer: ProcessId },
    BufferReset { peer: ProcessId, phase: u64 },
    PhaseRetry { peer: ProcessId, attempt: u32 },
    LinkAbandoned { peer: ProcessId },
    TimeoutFired { peer: ProcessId, phase: u64 },
    VcParked { id: MessageId, pending: usize },
    VcDrained { delivered: usize, pending: usize },
}

/// Work done on the delivery path, for the constant-time delivery check.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliveryCounters {
    pub deliveries: u64,
    /// Duplicate-suppression lookups.
    pub log_lookups: u64,
    /// Parked messages examined while looking for a deliverable one.
    pub pending_scans: u64,
    pub buffer_appends: u64,
}

/// State handed from a contact process to a process joining through it.
#[derive(Clone, Debug, Default)]
pub struct JoinState {
    pub received: ReceivedLog,
    pub clock: VectorClock,
    pub pending: Vec<(Payload, VectorClock)>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProtocolKind {
    #[serde(alias = "r", alias = "r-broadcast")]
    Rbroadcast,
    #[default]
    #[serde(alias = "pc-broadcast")]
    Pc,
    Vc,
}

impl ProtocolKind {
    pub const ALL: [ProtocolKind; 3] = [ProtocolKind::Rbroadcast, ProtocolKind::Pc, ProtocolKind::Vc];

    pub fn name(self) -> &'static str {
        match self {
            ProtocolKind::Rbroadcast => "rbroadcast",
            ProtocolKind::Pc => "pc",
            ProtocolKind::Vc => "vc",
        }
    }
}

impl fmt::Display for ProtocolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProtocolKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "rbroadcast" | "r-broadcast" | "r" => Ok(ProtocolKind::Rbroadcast),
            "pc" | "pc-broadcast" => Ok(ProtocolKind::Pc),
            "vc" => Ok(ProtocolKind::Vc),
            other => Err(format!("unknown protocol `{other}` (expected rbroadcast, pc or vc)")),
        }
    }
}

/// A broadcast protocol instance running at one process. Handlers are
/// atomic: each call runs to completion and reports its effects in order.
pub trait Protocol: Send {
    fn id(&self) -> ProcessId;

    fn kind(&self) -> ProtocolKind;

    fn broadcast(&mut self, body: Bytes, out: &mut Outbox) -> MessageId;

    fn receive(&mut self, from: ProcessId, msg: ProtocolMessage, out: &mut Outbox);

    /// A new outgoing link to `peer` exists.
    fn open_link(&mut self, peer: ProcessId, out: &mut Outbox);

    /// A new outgoing link that is safe from the start: the peer already
    /// holds everything this process delivered (initial topology, or a
    /// process that joined through us).
    fn adopt_link(&mut self, peer: ProcessId, out: &mut Outbox);

    fn close_link(&mut self, peer: ProcessId, out: &mut Outbox);

    fn timeout(&mut self, _peer: ProcessId, _phase: u64, _out: &mut Outbox) {}

    /// Outgoing links currently used for dissemination.
    fn safe_links(&self) -> Vec<ProcessId>;

    /// Links waiting for their ping phase, with their buffer lengths.
    fn buffering_links(&self) -> Vec<(ProcessId, usize)> {
        Vec::new()
    }

    fn pending_len(&self) -> usize {
        0
    }

    fn counters(&self) -> DeliveryCounters;

    fn join_state(&self) -> JoinState;

    fn install_join_state(&mut self, state: JoinState);
}
