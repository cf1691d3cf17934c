//! Flooding reliable broadcast: every process forwards each message once to
//! all of its neighbors on first receipt and delivers it at the same time.

use std::collections::BTreeSet;

use bytes::Bytes;

use crate::protocol::{
    DeliveryCounters, Effect, IdGenerator, JoinState, MessageId, Outbox, Payload, ProcessId, Protocol, ProtocolKind,
    ProtocolMessage, ReceivedLog,
};

#[derive(Clone, Debug)]
pub struct RBroadcast {
    me: ProcessId,
    neighbors: BTreeSet<ProcessId>,
    received: ReceivedLog,
    ids: IdGenerator,
    counters: DeliveryCounters,
}

impl RBroadcast {
    pub fn new(me: ProcessId) -> Self {
        RBroadcast {
            me,
            neighbors: BTreeSet::new(),
            received: ReceivedLog::new(),
            ids: IdGenerator::new(me),
            counters: DeliveryCounters::default(),
        }
    }

    pub fn neighbors(&self) -> &BTreeSet<ProcessId> {
        &self.neighbors
    }

    pub fn received(&self) -> &ReceivedLog {
        &self.received
    }

    /// Starts a new broadcast: records it and sends it to every neighbor.
    /// Delivery is left to the caller.
    pub(crate) fn originate(&mut self, body: Bytes, out: &mut Outbox) -> Payload {
        let payload = Payload {
            id: self.ids.next_message_id(),
            body,
        };
        self.received.mark_received(payload.id);
        self.forward(&payload, out);
        payload
    }

    /// Handles an incoming copy. Returns true on first receipt, after the
    /// copy has been forwarded; the caller then delivers it.
    pub(crate) fn accept(&mut self, payload: &Payload, out: &mut Outbox) -> bool {
        self.counters.log_lookups += 1;
        if !self.received.mark_received(payload.id) {
            return false;
        }
        self.forward(payload, out);
        true
    }

    fn forward(&self, payload: &Payload, out: &mut Outbox) {
        for &q in &self.neighbors {
            out.push(Effect::Send {
                to: q,
                msg: ProtocolMessage::Payload(payload.clone()),
            });
        }
    }

    pub(crate) fn insert_neighbor(&mut self, q: ProcessId) -> bool {
        q != self.me && self.neighbors.insert(q)
    }

    pub(crate) fn remove_neighbor(&mut self, q: ProcessId) -> bool {
        self.neighbors.remove(&q)
    }

    pub(crate) fn note_delivery(&mut self) {
        self.counters.deliveries += 1;
    }

    pub(crate) fn counters_mut(&mut self) -> &mut DeliveryCounters {
        &mut self.counters
    }

    pub(crate) fn replace_received(&mut self, received: ReceivedLog) {
        self.received = received;
    }
}

impl Protocol for RBroadcast {
    fn id(&self) -> ProcessId {
        self.me
    }

    fn kind(&self) -> ProtocolKind {
        ProtocolKind::Rbroadcast
    }

    fn broadcast(&mut self, body: Bytes, out: &mut Outbox) -> MessageId {
        let payload = self.originate(body, out);
        self.note_delivery();
        out.push(Effect::Deliver(payload.id));
        payload.id
    }

    fn receive(&mut self, _from: ProcessId, msg: ProtocolMessage, out: &mut Outbox) {
        if let ProtocolMessage::Payload(payload) = msg {
            if self.accept(&payload, out) {
                self.note_delivery();
                out.push(Effect::Deliver(payload.id));
            }
        }
    }

    fn open_link(&mut self, peer: ProcessId, out: &mut Outbox) {
        if self.insert_neighbor(peer) {
            out.push(Effect::Control(crate::protocol::ControlEvent::LinkSafe { peer }));
        }
    }

    fn adopt_link(&mut self, peer: ProcessId, out: &mut Outbox) {
        self.open_link(peer, out);
    }

    fn close_link(&mut self, peer: ProcessId, out: &mut Outbox) {
        if self.remove_neighbor(peer) {
            out.push(Effect::Control(crate::protocol::ControlEvent::LinkClosed { peer }));
        }
    }

    fn safe_links(&self) -> Vec<ProcessId> {
        self.neighbors.iter().copied().collect()
    }

    fn counters(&self) -> DeliveryCounters {
        self.counters
    }

    fn join_state(&self) -> JoinState {
        JoinState {
            received: self.received.clone(),
            ..JoinState::default()
        }
    }

    fn install_join_state(&mut self, state: JoinState) {
        self.received = state.received;
    }
}
