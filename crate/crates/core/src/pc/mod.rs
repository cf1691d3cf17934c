//! Preventive causal broadcast. New outgoing links start unsafe: messages
//! delivered while a link is unsafe are buffered for it, a ping travels to
//! the new neighbor over safe links, and the pong that comes back flushes
//! the buffer and promotes the link. Delivery itself never waits.

mod guard;

use std::collections::{BTreeMap, HashSet};

use bytes::Bytes;
use serde::{Deserialize, Serialize};

pub use guard::{GuardConfig, GuardState, RetryDecision};

use crate::protocol::{
    ControlEvent, DeliveryCounters, Effect, JoinState, MessageId, Outbox, Payload, PhaseTag, ProcessId, Protocol,
    ProtocolKind, ProtocolMessage,
};
use crate::rbroadcast::RBroadcast;

/// How pings reach the target of a new link.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PingRouting {
    /// Flood over safe links, deduplicated by (origin, phase).
    #[default]
    Flood,
    /// Forward hop by hop over one safe link chosen by the host.
    Route,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LinkBuffer {
    pub phase: u64,
    pub messages: Vec<Payload>,
}

#[derive(Clone, Debug)]
pub struct PcBroadcast {
    rb: RBroadcast,
    buffers: BTreeMap<ProcessId, LinkBuffer>,
    phase_counter: u64,
    seen_pings: HashSet<(ProcessId, u64)>,
    guard: GuardState,
    routing: PingRouting,
}

impl PcBroadcast {
    pub fn new(me: ProcessId, guard: GuardConfig, routing: PingRouting) -> Self {
        PcBroadcast {
            rb: RBroadcast::new(me),
            buffers: BTreeMap::new(),
            phase_counter: 0,
            seen_pings: HashSet::new(),
            guard: GuardState::new(guard),
            routing,
        }
    }

    pub fn is_safe(&self, q: ProcessId) -> bool {
        self.rb.neighbors().contains(&q)
    }

    pub fn buffer(&self, q: ProcessId) -> Option<&LinkBuffer> {
        self.buffers.get(&q)
    }

    pub fn guard(&self) -> &GuardState {
        &self.guard
    }

    pub fn phases_started(&self) -> u64 {
        self.phase_counter
    }

    fn me(&self) -> ProcessId {
        self.rb.id()
    }

    /// Either starts a ping phase for `q` or, when this process has no
    /// other link at all, makes `q` safe right away.
    fn start_or_promote(&mut self, q: ProcessId, out: &mut Outbox) {
        let others = self.rb.neighbors().iter().any(|&n| n != q) || self.buffers.keys().any(|&n| n != q);
        if others {
            self.start_phase(q, out);
        } else {
            if let Some(buffer) = self.buffers.remove(&q) {
                for m in buffer.messages {
                    out.push(Effect::Send {
                        to: q,
                        msg: ProtocolMessage::Payload(m),
                    });
                }
            }
            self.guard.on_close(q);
            self.promote(q, out);
        }
    }

    fn start_phase(&mut self, q: ProcessId, out: &mut Outbox) {
        self.phase_counter += 1;
        let phase = self.phase_counter;
        self.buffers.insert(
            q,
            LinkBuffer {
                phase,
                messages: Vec::new(),
            },
        );
        self.guard.on_ping(q, phase);
        out.push(Effect::Control(ControlEvent::PingSent { peer: q, phase }));
        let tag = PhaseTag {
            from: self.me(),
            to: q,
            phase,
        };
        match self.routing {
            PingRouting::Flood => {
                self.seen_pings.insert((tag.from, phase));
                self.flood_ping(tag, out);
            }
            PingRouting::Route => out.push(Effect::RoutePing(tag)),
        }
        if self.guard.config().timeout_ms.is_some() {
            out.push(Effect::ArmTimeout { peer: q, phase });
        }
    }

    fn flood_ping(&self, tag: PhaseTag, out: &mut Outbox) {
        for &n in self.rb.neighbors() {
            out.push(Effect::Send {
                to: n,
                msg: ProtocolMessage::Ping(tag),
            });
        }
    }

    fn promote(&mut self, q: ProcessId, out: &mut Outbox) {
        if self.rb.insert_neighbor(q) {
            out.push(Effect::Control(ControlEvent::LinkSafe { peer: q }));
        }
    }

    fn retry(&mut self, q: ProcessId, out: &mut Outbox) {
        match self.guard.begin_retry(q) {
            RetryDecision::Reopen { attempt } => {
                out.push(Effect::Control(ControlEvent::PhaseRetry { peer: q, attempt }));
                self.start_or_promote(q, out);
                if let Some(buffer) = self.buffers.get(&q) {
                    out.push(Effect::Control(ControlEvent::BufferReset {
                        peer: q,
                        phase: buffer.phase,
                    }));
                }
            }
            RetryDecision::Abandon { .. } => {
                self.buffers.remove(&q);
                self.rb.remove_neighbor(q);
                self.guard.on_close(q);
                out.push(Effect::Control(ControlEvent::LinkAbandoned { peer: q }));
            }
            RetryDecision::Untracked => {}
        }
    }

    fn on_deliver(&mut self, payload: Payload, out: &mut Outbox) {
        self.rb.note_delivery();
        out.push(Effect::Deliver(payload.id));
        let peers: Vec<ProcessId> = self.buffers.keys().copied().collect();
        for q in peers {
            let len = self.buffers[&q].messages.len();
            if self.guard.would_overflow(len) {
                self.retry(q, out);
            } else if let Some(buffer) = self.buffers.get_mut(&q) {
                buffer.messages.push(payload.clone());
                self.rb.counters_mut().buffer_appends += 1;
            }
        }
    }

    fn on_ping(&mut self, tag: PhaseTag, out: &mut Outbox) {
        if tag.to == self.me() {
            out.push(Effect::Direct {
                to: tag.from,
                msg: ProtocolMessage::Pong(tag),
            });
            out.push(Effect::Control(ControlEvent::PongSent {
                peer: tag.from,
                phase: tag.phase,
            }));
            return;
        }
        match self.routing {
            PingRouting::Flood => {
                if self.seen_pings.insert((tag.from, tag.phase)) {
                    self.flood_ping(tag, out);
                }
            }
            PingRouting::Route => {
                if tag.from != self.me() {
                    out.push(Effect::RoutePing(tag));
                }
            }
        }
    }

    fn on_pong(&mut self, tag: PhaseTag, out: &mut Outbox) {
        if tag.from != self.me() {
            return;
        }
        let q = tag.to;
        let current = self.buffers.get(&q).is_some_and(|b| b.phase == tag.phase);
        if !current {
            out.push(Effect::Control(ControlEvent::PongDiscarded {
                peer: q,
                phase: tag.phase,
            }));
            return;
        }
        let buffer = self.buffers.remove(&q).expect("checked above");
        let count = buffer.messages.len();
        for m in buffer.messages {
            out.push(Effect::Send {
                to: q,
                msg: ProtocolMessage::Payload(m),
            });
        }
        self.guard.on_ack(q, tag.phase);
        out.push(Effect::Control(ControlEvent::BufferFlushed {
            peer: q,
            phase: tag.phase,
            count,
        }));
        self.promote(q, out);
    }
}

impl Protocol for PcBroadcast {
    fn id(&self) -> ProcessId {
        self.me()
    }

    fn kind(&self) -> ProtocolKind {
        ProtocolKind::Pc
    }

    fn broadcast(&mut self, body: Bytes, out: &mut Outbox) -> MessageId {
        let payload = self.rb.originate(body, out);
        let id = payload.id;
        self.on_deliver(payload, out);
        id
    }

    fn receive(&mut self, _from: ProcessId, msg: ProtocolMessage, out: &mut Outbox) {
        match msg {
            ProtocolMessage::Payload(payload) => {
                if self.rb.accept(&payload, out) {
                    self.on_deliver(payload, out);
                }
            }
            ProtocolMessage::Ping(tag) => self.on_ping(tag, out),
            ProtocolMessage::Pong(tag) => self.on_pong(tag, out),
            ProtocolMessage::VcPayload { .. } => {}
        }
    }

    fn open_link(&mut self, peer: ProcessId, out: &mut Outbox) {
        if peer == self.me() || self.is_safe(peer) || self.buffers.contains_key(&peer) {
            return;
        }
        out.push(Effect::Control(ControlEvent::LinkOpened { peer }));
        self.start_or_promote(peer, out);
    }

    fn adopt_link(&mut self, peer: ProcessId, out: &mut Outbox) {
        if peer == self.me() {
            return;
        }
        if self.buffers.remove(&peer).is_some() {
            self.guard.on_close(peer);
        }
        self.promote(peer, out);
    }

    fn close_link(&mut self, peer: ProcessId, out: &mut Outbox) {
        let was_safe = self.rb.remove_neighbor(peer);
        let was_buffering = self.buffers.remove(&peer).is_some();
        self.guard.on_close(peer);
        if was_safe || was_buffering {
            out.push(Effect::Control(ControlEvent::LinkClosed { peer }));
        }
    }

    fn timeout(&mut self, peer: ProcessId, phase: u64, out: &mut Outbox) {
        out.push(Effect::Control(ControlEvent::TimeoutFired { peer, phase }));
        if self.guard.is_outstanding(phase) {
            self.retry(peer, out);
        }
    }

    fn safe_links(&self) -> Vec<ProcessId> {
        self.rb.neighbors().iter().copied().collect()
    }

    fn buffering_links(&self) -> Vec<(ProcessId, usize)> {
        self.buffers.iter().map(|(q, b)| (*q, b.messages.len())).collect()
    }

    fn counters(&self) -> DeliveryCounters {
        self.rb.counters()
    }

    fn join_state(&self) -> JoinState {
        self.rb.join_state()
    }

    fn install_join_state(&mut self, state: JoinState) {
        self.rb.replace_received(state.received);
    }
}

#[cfg(test)]
mod tests;
