//! Vector-clock causal broadcast, the comparison baseline. Messages carry
//! the sender's clock and wait in a pending set until every causal
//! predecessor has been delivered.

use std::collections::BTreeSet;

use bytes::Bytes;

use crate::protocol::{
    ControlEvent, DeliveryCounters, Effect, JoinState, MessageId, Outbox, Payload, ProcessId, Protocol, ProtocolKind,
    ProtocolMessage, ReceivedLog, VectorClock,
};

#[derive(Clone, Debug)]
pub struct VcBroadcast {
    me: ProcessId,
    neighbors: BTreeSet<ProcessId>,
    received: ReceivedLog,
    clock: VectorClock,
    pending: Vec<(Payload, VectorClock)>,
    counters: DeliveryCounters,
}

impl VcBroadcast {
    pub fn new(me: ProcessId) -> Self {
        VcBroadcast {
            me,
            neighbors: BTreeSet::new(),
            received: ReceivedLog::new(),
            clock: VectorClock::new(),
            pending: Vec::new(),
            counters: DeliveryCounters::default(),
        }
    }

    pub fn clock(&self) -> &VectorClock {
        &self.clock
    }

    fn is_ready(&self, origin: ProcessId, clock: &VectorClock) -> bool {
        clock.get(origin) == self.clock.get(origin) + 1
            && clock.entries().all(|(k, c)| k == origin || c <= self.clock.get(k))
    }

    fn forward(&self, payload: &Payload, clock: &VectorClock, out: &mut Outbox) {
        for &q in &self.neighbors {
            out.push(Effect::Send {
                to: q,
                msg: ProtocolMessage::VcPayload {
                    payload: payload.clone(),
                    clock: clock.clone(),
                },
            });
        }
    }

    fn deliver(&mut self, id: MessageId, out: &mut Outbox) {
        self.clock.increment(id.origin);
        self.counters.deliveries += 1;
        out.push(Effect::Deliver(id));
    }

    /// Delivers parked messages until a full pass over the pending set
    /// finds none ready.
    fn drain(&mut self, out: &mut Outbox) {
        let mut delivered = 0;
        loop {
            let mut ready = None;
            for (i, (payload, clock)) in self.pending.iter().enumerate() {
                self.counters.pending_scans += 1;
                if self.is_ready(payload.id.origin, clock) {
                    ready = Some(i);
                    break;
                }
            }
            let Some(i) = ready else { break };
            let (payload, _) = self.pending.remove(i);
            self.deliver(payload.id, out);
            delivered += 1;
        }
        if delivered > 0 {
            out.push(Effect::Control(ControlEvent::VcDrained {
                delivered,
                pending: self.pending.len(),
            }));
        }
    }
}

impl Protocol for VcBroadcast {
    fn id(&self) -> ProcessId {
        self.me
    }

    fn kind(&self) -> ProtocolKind {
        ProtocolKind::Vc
    }

    fn broadcast(&mut self, body: Bytes, out: &mut Outbox) -> MessageId {
        let mut clock = self.clock.clone();
        let counter = clock.increment(self.me);
        let payload = Payload {
            id: MessageId::new(self.me, counter),
            body,
        };
        self.received.mark_received(payload.id);
        self.forward(&payload, &clock, out);
        self.deliver(payload.id, out);
        payload.id
    }

    fn receive(&mut self, _from: ProcessId, msg: ProtocolMessage, out: &mut Outbox) {
        let ProtocolMessage::VcPayload { payload, clock } = msg else {
            return;
        };
        self.counters.log_lookups += 1;
        if !self.received.mark_received(payload.id) {
            return;
        }
        self.forward(&payload, &clock, out);
        if self.is_ready(payload.id.origin, &clock) {
            self.deliver(payload.id, out);
            self.drain(out);
        } else {
            let id = payload.id;
            self.pending.push((payload, clock));
            out.push(Effect::Control(ControlEvent::VcParked {
                id,
                pending: self.pending.len(),
            }));
        }
    }

    fn open_link(&mut self, peer: ProcessId, out: &mut Outbox) {
        if peer != self.me && self.neighbors.insert(peer) {
            out.push(Effect::Control(ControlEvent::LinkSafe { peer }));
        }
    }

    fn adopt_link(&mut self, peer: ProcessId, out: &mut Outbox) {
        self.open_link(peer, out);
    }

    fn close_link(&mut self, peer: ProcessId, out: &mut Outbox) {
        if self.neighbors.remove(&peer) {
            out.push(Effect::Control(ControlEvent::LinkClosed { peer }));
        }
    }

    fn safe_links(&self) -> Vec<ProcessId> {
        self.neighbors.iter().copied().collect()
    }

    fn pending_len(&self) -> usize {
        self.pending.len()
    }

    fn counters(&self) -> DeliveryCounters {
        self.counters
    }

    fn join_state(&self) -> JoinState {
        JoinState {
            received: self.received.clone(),
            clock: self.clock.clone(),
            pending: self.pending.clone(),
        }
    }

    fn install_join_state(&mut self, state: JoinState) {
        self.received = state.received;
        self.clock = state.clock;
        self.pending = state.pending;
    }
}
