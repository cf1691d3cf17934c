//! Ground-truth checks over finished traces.
//!
//! Happen-before between broadcasts is rebuilt with oracle vector clocks
//! that advance on broadcast and merge on delivery. Wall or virtual time
//! plays no part in it, so latency patterns cannot hide a violation. The
//! oracle only reads traces; protocol state never sees its clocks.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::protocol::{ControlEvent, MessageId, ProcessId, ProtocolKind};
use crate::trace::{EventKind, TopologyChange, Trace, TraceEvent};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CausalViolation {
    pub process: ProcessId,
    /// Broadcast first, delivered second.
    pub before: MessageId,
    /// Broadcast second, delivered first.
    pub after: MessageId,
    /// When the late delivery exposed the violation.
    pub time: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Duplicate {
    pub process: ProcessId,
    pub id: MessageId,
    pub time: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Missing {
    pub process: ProcessId,
    pub id: MessageId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SafeLinkBreach {
    pub from: ProcessId,
    pub to: ProcessId,
    /// The message whose arrival came too early.
    pub message: MessageId,
    /// A message the sender delivered first that the receiver still lacked.
    pub missing: MessageId,
    pub time: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PingAckBreach {
    pub process: ProcessId,
    pub peer: ProcessId,
    pub phase: u64,
    pub missing: MessageId,
    pub time: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub causal_violations: Vec<CausalViolation>,
    pub duplicates: Vec<Duplicate>,
    pub missing_deliveries: Vec<Missing>,
    pub safe_link_breaches: Vec<SafeLinkBreach>,
    pub ping_ack_breaches: Vec<PingAckBreach>,
    /// Whether link-safety findings count against cleanliness. Only
    /// protocols that claim safe links are held to it.
    pub safe_links_enforced: bool,
}

impl Verdict {
    pub fn is_clean(&self) -> bool {
        self.causal_violations.is_empty()
            && self.duplicates.is_empty()
            && self.missing_deliveries.is_empty()
            && (!self.safe_links_enforced || (self.safe_link_breaches.is_empty() && self.ping_ack_breaches.is_empty()))
    }

    pub fn violations_until(&self, time: u64) -> usize {
        self.causal_violations.iter().filter(|v| v.time <= time).count()
    }

    pub fn duplicates_until(&self, time: u64) -> usize {
        self.duplicates.iter().filter(|d| d.time <= time).count()
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum OracleError {
    #[error("event {index}: {process} delivers {id} without receiving or broadcasting it")]
    DeliverWithoutReceive {
        index: usize,
        process: ProcessId,
        id: MessageId,
    },
    #[error("event {index}: {id} delivered but never broadcast")]
    UnknownMessage { index: usize, id: MessageId },
    #[error("event {index}: {id} broadcast twice")]
    DoubleBroadcast { index: usize, id: MessageId },
}

#[derive(Clone, Copy, Debug, Default)]
pub struct VerifyOptions {
    pub enforce_safe_links: bool,
}

impl VerifyOptions {
    pub fn for_protocol(kind: ProtocolKind) -> Self {
        VerifyOptions {
            enforce_safe_links: kind == ProtocolKind::Pc,
        }
    }
}

pub fn verify(trace: &Trace) -> Result<Verdict, OracleError> {
    verify_events(
        &trace.events,
        trace.header.processes,
        VerifyOptions::for_protocol(trace.header.protocol),
    )
}

type Clock = BTreeMap<ProcessId, u64>;

#[derive(Default)]
struct ProcessView {
    received: HashSet<MessageId>,
    delivered: Vec<MessageId>,
    position: HashMap<MessageId, usize>,
    excused: HashSet<MessageId>,
    clock: Clock,
    /// Per origin, the length of the broadcast prefix known to be
    /// delivered or excused here.
    done: HashMap<ProcessId, u64>,
    gone: bool,
}

impl ProcessView {
    fn settled(&self, id: &MessageId) -> bool {
        self.position.contains_key(id) || self.excused.contains(id)
    }
}

struct Replay {
    procs: BTreeMap<ProcessId, ProcessView>,
    clocks: HashMap<MessageId, Clock>,
    /// Per origin, its broadcasts in order.
    by_origin: HashMap<ProcessId, Vec<MessageId>>,
    seq: HashMap<MessageId, u64>,
    /// (process, missing dependency) -> messages delivered while it was missing.
    waiting: HashMap<(ProcessId, MessageId), Vec<MessageId>>,
    sends: HashMap<(ProcessId, ProcessId, MessageId), usize>,
    link_checked: HashMap<(ProcessId, ProcessId), usize>,
    pings: HashMap<(ProcessId, u64), usize>,
    verdict: Verdict,
}

pub fn verify_events(
    events: &[TraceEvent],
    initial_processes: u64,
    options: VerifyOptions,
) -> Result<Verdict, OracleError> {
    let mut r = Replay {
        procs: (0..initial_processes)
            .map(|i| (ProcessId(i), ProcessView::default()))
            .collect(),
        clocks: HashMap::new(),
        by_origin: HashMap::new(),
        seq: HashMap::new(),
        waiting: HashMap::new(),
        sends: HashMap::new(),
        link_checked: HashMap::new(),
        pings: HashMap::new(),
        verdict: Verdict {
            safe_links_enforced: options.enforce_safe_links,
            ..Verdict::default()
        },
    };
    for (index, e) in events.iter().enumerate() {
        r.step(index, e)?;
    }
    r.finish();
    Ok(r.verdict)
}

impl Replay {
    fn view(&mut self, p: ProcessId) -> &mut ProcessView {
        self.procs.entry(p).or_default()
    }

    fn step(&mut self, index: usize, e: &TraceEvent) -> Result<(), OracleError> {
        let p = e.process;
        match &e.kind {
            EventKind::Broadcast { id } => {
                if self.clocks.contains_key(id) {
                    return Err(OracleError::DoubleBroadcast { index, id: *id });
                }
                let list = self.by_origin.entry(p).or_default();
                list.push(*id);
                let n = list.len() as u64;
                self.seq.insert(*id, n);
                let view = self.view(p);
                view.clock.insert(p, n);
                view.received.insert(*id);
                let clock = view.clock.clone();
                self.clocks.insert(*id, clock);
            }
            EventKind::Send { id, to, .. } => {
                let view = self.view(p);
                let prefix = view.position.get(id).copied().unwrap_or(view.delivered.len());
                self.sends.insert((p, *to, *id), prefix);
            }
            EventKind::Receive { id, from } => {
                self.view(p).received.insert(*id);
                if let Some(prefix) = self.sends.remove(&(*from, p, *id)) {
                    self.check_link(*from, p, *id, prefix, e.time);
                }
            }
            EventKind::Deliver { id } => self.deliver(index, p, *id, e.time)?,
            EventKind::Topology { change } => match change {
                TopologyChange::Join { contact } => {
                    let (received, excused) = {
                        let c = self.view(*contact);
                        let settled: HashSet<MessageId> = c.position.keys().chain(&c.excused).copied().collect();
                        (c.received.clone(), settled)
                    };
                    let view = self.view(p);
                    view.received.extend(received);
                    view.excused.extend(excused);
                    view.gone = false;
                }
                TopologyChange::Leave | TopologyChange::Crash => self.view(p).gone = true,
                TopologyChange::AddLink { .. } | TopologyChange::RemoveLink { .. } => {}
            },
            EventKind::Control { detail } => match detail {
                ControlEvent::PingSent { phase, .. } => {
                    let n = self.view(p).delivered.len();
                    self.pings.insert((p, *phase), n);
                }
                ControlEvent::BufferFlushed { peer, phase, .. } => {
                    if let Some(prefix) = self.pings.remove(&(p, *phase)) {
                        self.check_ping_ack(p, *peer, *phase, prefix, e.time);
                    }
                }
                _ => {}
            },
        }
        Ok(())
    }

    fn deliver(&mut self, index: usize, p: ProcessId, id: MessageId, time: u64) -> Result<(), OracleError> {
        let Some(msg_clock) = self.clocks.get(&id).cloned() else {
            return Err(OracleError::UnknownMessage { index, id });
        };
        let view = self.view(p);
        if !view.received.contains(&id) {
            return Err(OracleError::DeliverWithoutReceive { index, process: p, id });
        }
        if view.position.contains_key(&id) {
            self.verdict.duplicates.push(Duplicate { process: p, id, time });
            return Ok(());
        }
        let pos = view.delivered.len();
        view.delivered.push(id);
        view.position.insert(id, pos);
        for (&o, &c) in &msg_clock {
            let e = view.clock.entry(o).or_insert(0);
            *e = (*e).max(c);
        }

        // anything that was delivered here while `id` was still missing
        // and depends on it is now a violation
        if let Some(later) = self.waiting.remove(&(p, id)) {
            for after in later {
                self.verdict.causal_violations.push(CausalViolation {
                    process: p,
                    before: id,
                    after,
                    time,
                });
            }
        }

        // dependencies of `id` not yet settled at p
        let own_seq = self.seq[&id];
        for (&o, &c) in &msg_clock {
            let upto = if o == id.origin { own_seq - 1 } else { c };
            let list = &self.by_origin[&o];
            let view = self.procs.get_mut(&p).expect("view exists");
            let mut done = view.done.get(&o).copied().unwrap_or(0);
            while done < upto && view.settled(&list[done as usize]) {
                done += 1;
            }
            view.done.insert(o, done);
            for k in done..upto {
                let dep = list[k as usize];
                if !view.settled(&dep) {
                    self.waiting.entry((p, dep)).or_default().push(id);
                }
            }
        }
        Ok(())
    }

    fn check_link(&mut self, from: ProcessId, to: ProcessId, message: MessageId, prefix: usize, time: u64) {
        let checked = self.link_checked.get(&(from, to)).copied().unwrap_or(0);
        if prefix <= checked {
            return;
        }
        let sender = &self.procs[&from];
        let receiver = &self.procs[&to];
        for &m in &sender.delivered[checked..prefix] {
            if !receiver.received.contains(&m) {
                self.verdict.safe_link_breaches.push(SafeLinkBreach {
                    from,
                    to,
                    message,
                    missing: m,
                    time,
                });
            }
        }
        self.link_checked.insert((from, to), prefix);
    }

    fn check_ping_ack(&mut self, p: ProcessId, peer: ProcessId, phase: u64, prefix: usize, time: u64) {
        let Some(target) = self.procs.get(&peer) else {
            return;
        };
        let sender = &self.procs[&p];
        for &m in &sender.delivered[..prefix] {
            if !target.received.contains(&m) {
                self.verdict.ping_ack_breaches.push(PingAckBreach {
                    process: p,
                    peer,
                    phase,
                    missing: m,
                    time,
                });
            }
        }
    }

    fn finish(&mut self) {
        let everywhere: BTreeSet<MessageId> = self.procs.values().flat_map(|v| v.delivered.iter().copied()).collect();
        for (&p, view) in &self.procs {
            if view.gone {
                continue;
            }
            for &id in &everywhere {
                if !view.settled(&id) {
                    self.verdict.missing_deliveries.push(Missing { process: p, id });
                }
            }
        }
        let v = &mut self.verdict;
        v.causal_violations
            .sort_by_key(|c| (c.time, c.process, c.before, c.after));
        v.safe_link_breaches
            .sort_by_key(|b| (b.time, b.from, b.to, b.message, b.missing));
    }
}
