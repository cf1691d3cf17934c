use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap, HashMap};

use bytes::Bytes;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::metrics::{self, MetricsRow};
use crate::oracle::{self, OracleError, Verdict, VerifyOptions};
use crate::pc::{GuardConfig, PcBroadcast};
use crate::protocol::{
    ControlEvent, DeliveryCounters, Effect, Outbox, ProcessId, Protocol, ProtocolKind, ProtocolMessage,
};
use crate::rbroadcast::RBroadcast;
use crate::trace::{EventKind, TopologyChange, Trace, TraceEvent, TraceHeader};
use crate::vc::VcBroadcast;

use super::latency::LatencyModel;
use super::scenario::{InitialTopology, Scenario, ScenarioError, ScriptAction};
use super::spray;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("at {time} ms, {action} would partition the network (set limits.allow_partitions to permit)")]
    Partition { time: u64, action: String },
    #[error("at {time} ms, script step cannot run: {reason}")]
    Script { time: u64, reason: String },
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Outcome {
    /// The event queue drained.
    Quiescent { end_ms: u64 },
    /// Events were still scheduled past the hard stop.
    TimeLimit { end_ms: u64, pending_events: usize },
}

impl Outcome {
    pub fn is_quiescent(&self) -> bool {
        matches!(self, Outcome::Quiescent { .. })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub events: u64,
    pub broadcasts: u64,
    pub payload_sends: u64,
    pub control_bytes: u64,
    pub ping_phases: u64,
    pub retries: u64,
    pub abandoned_links: u64,
    pub unroutable_pings: u64,
    pub dropped_pongs: u64,
    /// Largest single link buffer observed between events.
    pub max_buffer_seen: usize,
    pub skipped_dynamics: u64,
    pub delivery: DeliveryCounters,
    pub alive_at_end: u64,
    pub timeout_ms: Option<u64>,
}

pub struct RunOutput {
    pub trace: Trace,
    pub verdict: Verdict,
    pub rows: Vec<MetricsRow>,
    pub outcome: Outcome,
    pub stats: RunStats,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Status {
    Alive,
    Left,
    Crashed,
}

enum Event {
    Link {
        from: ProcessId,
        to: ProcessId,
        msg: ProtocolMessage,
    },
    Direct {
        from: ProcessId,
        to: ProcessId,
        msg: ProtocolMessage,
    },
    Timeout {
        process: ProcessId,
        peer: ProcessId,
        phase: u64,
    },
    Workload,
    Shuffle(ProcessId),
    Churn,
    Script(usize),
    Sample,
}

struct Queued {
    time: u64,
    seq: u64,
    event: Event,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}

impl Eq for Queued {}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Queued {
    // Reversed so the max-heap pops the earliest event; ties go to the
    // event scheduled first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.seq).cmp(&(self.time, self.seq))
    }
}

type Arcs = Vec<BTreeSet<ProcessId>>;

/// A running simulation. Build with [`Simulation::new`], then either
/// [`Simulation::run`] to completion or step it manually.
pub struct Simulation {
    scenario: Scenario,
    guard: GuardConfig,
    now: u64,
    seq: u64,
    queue: BinaryHeap<Queued>,
    procs: Vec<Box<dyn Protocol>>,
    status: Vec<Status>,
    alive: Vec<bool>,
    out: Arcs,
    inn: Arcs,
    safe_out: Arcs,
    safe_in: Arcs,
    latency: LatencyModel,
    link_tail: HashMap<(ProcessId, ProcessId), u64>,
    drop_pongs: HashMap<(ProcessId, ProcessId), u32>,
    events: Vec<TraceEvent>,
    topo_rng: ChaCha8Rng,
    work_rng: ChaCha8Rng,
    metric_rng: ChaCha8Rng,
    workload_left: u64,
    rows: Vec<MetricsRow>,
    stats: RunStats,
    visit: Vec<u32>,
    visit_stamp: u32,
}

impl Simulation {
    pub fn new(scenario: Scenario) -> Result<Simulation, SimError> {
        scenario.validate()?;
        let seed = scenario.seed;
        let mut latency = LatencyModel::new(seed, scenario.latency_ramp);
        for d in &scenario.direct_latency {
            latency.set_direct(ProcessId(d.from), ProcessId(d.to), d.latency_ms);
        }
        let guard = scenario.resolved_guard();
        let mut sim = Simulation {
            guard,
            now: 0,
            seq: 0,
            queue: BinaryHeap::new(),
            procs: Vec::new(),
            status: Vec::new(),
            alive: Vec::new(),
            out: Vec::new(),
            inn: Vec::new(),
            safe_out: Vec::new(),
            safe_in: Vec::new(),
            latency,
            link_tail: HashMap::new(),
            drop_pongs: HashMap::new(),
            events: Vec::new(),
            topo_rng: ChaCha8Rng::seed_from_u64(seed),
            work_rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5752_4b4c_4f41_4400),
            metric_rng: ChaCha8Rng::seed_from_u64(seed ^ 0x4d45_5452_4943_5300),
            workload_left: scenario.workload.total_messages,
            rows: Vec::new(),
            stats: RunStats {
                timeout_ms: guard.timeout_ms,
                ..RunStats::default()
            },
            visit: Vec::new(),
            visit_stamp: 0,
            scenario,
        };
        for _ in 0..sim.scenario.process_count {
            sim.spawn();
        }
        sim.build_initial_topology();
        sim.schedule_initial();
        Ok(sim)
    }

    /// Builds and runs a scenario to completion.
    pub fn run_scenario(scenario: Scenario) -> Result<RunOutput, SimError> {
        Simulation::new(scenario)?.run()
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn process_count(&self) -> usize {
        self.procs.len()
    }

    pub fn protocol(&self, p: ProcessId) -> &dyn Protocol {
        self.procs[p.index()].as_ref()
    }

    pub fn is_alive(&self, p: ProcessId) -> bool {
        self.alive.get(p.index()).copied().unwrap_or(false)
    }

    pub fn links(&self, p: ProcessId) -> &BTreeSet<ProcessId> {
        &self.out[p.index()]
    }

    pub fn safe_links(&self, p: ProcessId) -> &BTreeSet<ProcessId> {
        &self.safe_out[p.index()]
    }

    pub fn trace_events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn stats(&self) -> &RunStats {
        &self.stats
    }

    fn spawn(&mut self) -> ProcessId {
        let id = ProcessId(self.procs.len() as u64);
        let proto: Box<dyn Protocol> = match self.scenario.protocol {
            ProtocolKind::Rbroadcast => Box::new(RBroadcast::new(id)),
            ProtocolKind::Pc => Box::new(PcBroadcast::new(id, self.guard, self.scenario.ping_routing)),
            ProtocolKind::Vc => Box::new(VcBroadcast::new(id)),
        };
        self.procs.push(proto);
        self.status.push(Status::Alive);
        self.alive.push(true);
        for arcs in [&mut self.out, &mut self.inn, &mut self.safe_out, &mut self.safe_in] {
            arcs.push(BTreeSet::new());
        }
        id
    }

    fn build_initial_topology(&mut self) {
        let n = self.scenario.process_count;
        let mut arcs: Vec<(u64, u64)> = Vec::new();
        match self.scenario.initial_topology.clone() {
            InitialTopology::Clique => {
                for a in 0..n {
                    arcs.extend((0..n).filter(|b| *b != a).map(|b| (a, b)));
                }
            }
            InitialTopology::RandomGraph { degree } => {
                let mut sets: Vec<BTreeSet<u64>> = vec![BTreeSet::new(); n as usize];
                for a in 0..n {
                    if degree >= 1 {
                        sets[a as usize].insert((a + 1) % n);
                    }
                    if degree >= 2 {
                        sets[a as usize].insert((a + n - 1) % n);
                    }
                }
                for a in 0..n {
                    while sets[a as usize].len() < degree {
                        let b = self.topo_rng.random_range(0..n);
                        if b != a {
                            sets[a as usize].insert(b);
                        }
                    }
                    arcs.extend(sets[a as usize].iter().map(|b| (a, *b)));
                }
            }
            InitialTopology::Explicit { edges } => {
                for e in edges {
                    if let Some(ms) = e.latency_ms {
                        self.latency.set_fixed(ProcessId(e.from), ProcessId(e.to), ms);
                    }
                    arcs.push((e.from, e.to));
                }
            }
        }
        for (a, b) in arcs {
            let (a, b) = (ProcessId(a), ProcessId(b));
            if self.raw_add(a, b) {
                self.record(
                    a,
                    EventKind::Topology {
                        change: TopologyChange::AddLink { peer: b },
                    },
                );
                let mut out = Outbox::new();
                self.procs[a.index()].adopt_link(b, &mut out);
                self.apply(a, out);
            }
        }
    }

    fn schedule_initial(&mut self) {
        let steps: Vec<u64> = self.scenario.script.iter().map(|s| s.at_ms).collect();
        for (i, at) in steps.into_iter().enumerate() {
            self.schedule(at, Event::Script(i));
        }
        let w = self.scenario.workload;
        if w.total_messages > 0 && w.rate_per_process_per_s > 0.0 {
            let first = w.start_ms + self.workload_gap();
            self.schedule(first, Event::Workload);
        }
        let d = self.scenario.dynamics;
        if d.shuffle_period_ms > 0 && d.until_ms > 0 {
            for p in 0..self.procs.len() {
                let at = self.shuffle_gap();
                if at <= d.until_ms {
                    self.schedule(at, Event::Shuffle(ProcessId(p as u64)));
                }
            }
        }
        if d.churn_rate() > 0.0 && d.until_ms > 0 {
            let at = self.churn_gap();
            if at <= d.until_ms {
                self.schedule(at, Event::Churn);
            }
        }
        if self.scenario.sampling.every_ms > 0 {
            self.schedule(self.scenario.sampling.start_ms, Event::Sample);
        }
    }

    fn schedule(&mut self, time: u64, event: Event) {
        self.seq += 1;
        self.queue.push(Queued {
            time,
            seq: self.seq,
            event,
        });
    }

    fn record(&mut self, process: ProcessId, kind: EventKind) {
        self.events.push(TraceEvent {
            time: self.now,
            process,
            kind,
        });
    }

    fn alive_count(&self) -> usize {
        self.alive.iter().filter(|a| **a).count()
    }

    fn alive_ids(&self) -> Vec<ProcessId> {
        (0..self.procs.len())
            .filter(|i| self.alive[*i])
            .map(|i| ProcessId(i as u64))
            .collect()
    }

    fn workload_gap(&mut self) -> u64 {
        let lambda = self.scenario.workload.rate_per_process_per_s * self.alive_count().max(1) as f64 / 1000.0;
        let exp = Exp::new(lambda).expect("positive rate");
        exp.sample(&mut self.work_rng).round() as u64
    }

    fn churn_gap(&mut self) -> u64 {
        let exp = Exp::new(self.scenario.dynamics.churn_rate() / 1000.0).expect("positive rate");
        self.now + exp.sample(&mut self.topo_rng).round() as u64
    }

    fn shuffle_gap(&mut self) -> u64 {
        let period = self.scenario.dynamics.shuffle_period_ms;
        self.now + self.topo_rng.random_range(period / 2..=period)
    }

    /// Processes the next event. Returns `false` once the queue is empty or
    /// the next event lies beyond the hard stop.
    pub fn step(&mut self) -> Result<bool, SimError> {
        let Some(next) = self.queue.peek() else {
            return Ok(false);
        };
        if next.time > self.scenario.limits.max_time_ms {
            return Ok(false);
        }
        let Queued { time, event, .. } = self.queue.pop().expect("peeked");
        self.now = time;
        self.stats.events += 1;
        let touched = self.handle(event)?;
        if self.scenario.protocol == ProtocolKind::Pc {
            if let Some(p) = touched {
                let longest = self.procs[p.index()]
                    .buffering_links()
                    .iter()
                    .map(|(_, len)| *len)
                    .max()
                    .unwrap_or(0);
                self.stats.max_buffer_seen = self.stats.max_buffer_seen.max(longest);
            }
        }
        Ok(true)
    }

    /// Runs every event scheduled at or before `t`.
    pub fn run_until(&mut self, t: u64) -> Result<(), SimError> {
        while self.queue.peek().is_some_and(|q| q.time <= t) {
            if !self.step()? {
                break;
            }
        }
        self.now = self.now.max(t.min(self.scenario.limits.max_time_ms));
        Ok(())
    }

    pub fn run(mut self) -> Result<RunOutput, SimError> {
        while self.step()? {}
        self.finish()
    }

    /// Stops the run where it is, takes a final snapshot and checks the trace.
    pub fn finish(mut self) -> Result<RunOutput, SimError> {
        let outcome = if self.queue.is_empty() {
            Outcome::Quiescent { end_ms: self.now }
        } else {
            Outcome::TimeLimit {
                end_ms: self.now,
                pending_events: self.queue.len(),
            }
        };
        self.sample();
        let header = TraceHeader {
            scenario: self.scenario.name.clone(),
            protocol: self.scenario.protocol,
            seed: self.scenario.seed,
            processes: self.scenario.process_count,
        };
        let verdict = oracle::verify_events(
            &self.events,
            header.processes,
            VerifyOptions::for_protocol(self.scenario.protocol),
        )?;
        for row in &mut self.rows {
            row.violations = verdict.violations_until(row.time_ms) as u64;
            row.duplicates = verdict.duplicates_until(row.time_ms) as u64;
        }
        let mut delivery = DeliveryCounters::default();
        for p in &self.procs {
            let c = p.counters();
            delivery.deliveries += c.deliveries;
            delivery.log_lookups += c.log_lookups;
            delivery.pending_scans += c.pending_scans;
            delivery.buffer_appends += c.buffer_appends;
        }
        self.stats.delivery = delivery;
        self.stats.alive_at_end = self.alive_count() as u64;
        Ok(RunOutput {
            trace: Trace {
                header,
                events: self.events,
            },
            verdict,
            rows: self.rows,
            outcome,
            stats: self.stats,
        })
    }

    fn handle(&mut self, event: Event) -> Result<Option<ProcessId>, SimError> {
        match event {
            Event::Link { from, to, msg } => {
                if !self.accepts(from, to) {
                    return Ok(None);
                }
                if let Some(id) = msg.payload_id() {
                    self.record(to, EventKind::Receive { id, from });
                }
                let mut out = Outbox::new();
                self.procs[to.index()].receive(from, msg, &mut out);
                self.apply(to, out);
                Ok(Some(to))
            }
            Event::Direct { from, to, msg } => {
                if !self.accepts(from, to) {
                    return Ok(None);
                }
                let mut out = Outbox::new();
                self.procs[to.index()].receive(from, msg, &mut out);
                self.apply(to, out);
                Ok(Some(to))
            }
            Event::Timeout { process, peer, phase } => {
                if !self.is_alive(process) {
                    return Ok(None);
                }
                let mut out = Outbox::new();
                self.procs[process.index()].timeout(peer, phase, &mut out);
                self.apply(process, out);
                Ok(Some(process))
            }
            Event::Workload => {
                let alive = self.alive_ids();
                if let Some(&p) = alive.choose(&mut self.work_rng) {
                    self.broadcast(p);
                }
                self.workload_left = self.workload_left.saturating_sub(1);
                if self.workload_left > 0 {
                    let at = self.now + self.workload_gap();
                    self.schedule(at, Event::Workload);
                }
                Ok(None)
            }
            Event::Shuffle(p) => {
                if self.is_alive(p) {
                    self.shuffle(p);
                    let at = self.shuffle_gap();
                    if at <= self.scenario.dynamics.until_ms {
                        self.schedule(at, Event::Shuffle(p));
                    }
                }
                Ok(Some(p))
            }
            Event::Churn => {
                self.churn();
                let at = self.churn_gap();
                if at <= self.scenario.dynamics.until_ms {
                    self.schedule(at, Event::Churn);
                }
                Ok(None)
            }
            Event::Script(i) => self.script(i),
            Event::Sample => {
                self.sample();
                let s = self.scenario.sampling;
                let until = if s.until_ms > 0 {
                    s.until_ms
                } else {
                    self.scenario.dynamics.until_ms
                };
                let at = self.now + s.every_ms;
                if at <= until {
                    self.schedule(at, Event::Sample);
                }
                Ok(None)
            }
        }
    }

    /// Messages to a departed process vanish; so do messages still in
    /// flight from a crashed one.
    fn accepts(&self, from: ProcessId, to: ProcessId) -> bool {
        self.status[to.index()] == Status::Alive && self.status[from.index()] != Status::Crashed
    }

    fn broadcast(&mut self, p: ProcessId) {
        let body = Bytes::from(vec![0u8; self.scenario.workload.body_bytes]);
        let mut out = Outbox::new();
        let id = self.procs[p.index()].broadcast(body, &mut out);
        self.stats.broadcasts += 1;
        self.record(p, EventKind::Broadcast { id });
        self.apply(p, out);
    }

    fn send_on_link(&mut self, from: ProcessId, to: ProcessId, msg: ProtocolMessage) {
        if !self.out[from.index()].contains(&to) {
            debug_assert!(false, "{from} sends to {to} without a link");
            return;
        }
        if let Some(id) = msg.payload_id() {
            let control_bytes = msg.serialized_control_size() as u32;
            self.stats.payload_sends += 1;
            self.stats.control_bytes += u64::from(control_bytes);
            self.record(from, EventKind::Send { id, to, control_bytes });
        }
        let mut at = self.now + self.latency.link_delay(from, to, self.now);
        let tail = self.link_tail.entry((from, to)).or_insert(0);
        at = at.max(*tail);
        *tail = at;
        self.schedule(at, Event::Link { from, to, msg });
    }

    fn apply(&mut self, p: ProcessId, effects: Outbox) {
        for effect in effects {
            match effect {
                Effect::Send { to, msg } => self.send_on_link(p, to, msg),
                Effect::RoutePing(tag) => match self.next_hop(p, tag.to) {
                    Some(hop) => self.send_on_link(p, hop, ProtocolMessage::Ping(tag)),
                    None => self.stats.unroutable_pings += 1,
                },
                Effect::Direct { to, msg } => {
                    if matches!(msg, ProtocolMessage::Pong(_)) {
                        if let Some(n) = self.drop_pongs.get_mut(&(p, to)).filter(|n| **n > 0) {
                            *n -= 1;
                            self.stats.dropped_pongs += 1;
                            continue;
                        }
                    }
                    let at = self.now + self.latency.direct_delay(p, to, self.now);
                    self.schedule(at, Event::Direct { from: p, to, msg });
                }
                Effect::Deliver(id) => self.record(p, EventKind::Deliver { id }),
                Effect::ArmTimeout { peer, phase } => {
                    if let Some(t) = self.guard.timeout_ms {
                        self.schedule(
                            self.now + t,
                            Event::Timeout {
                                process: p,
                                peer,
                                phase,
                            },
                        );
                    }
                }
                Effect::Control(detail) => {
                    match &detail {
                        ControlEvent::PingSent { .. } => self.stats.ping_phases += 1,
                        ControlEvent::PhaseRetry { .. } => self.stats.retries += 1,
                        ControlEvent::LinkSafe { peer } => {
                            self.safe_out[p.index()].insert(*peer);
                            self.safe_in[peer.index()].insert(p);
                        }
                        ControlEvent::LinkClosed { peer } => self.unmark_safe(p, *peer),
                        ControlEvent::LinkAbandoned { peer } => {
                            self.stats.abandoned_links += 1;
                            self.unmark_safe(p, *peer);
                        }
                        _ => {}
                    }
                    let abandoned = match &detail {
                        ControlEvent::LinkAbandoned { peer } => Some(*peer),
                        _ => None,
                    };
                    self.record(p, EventKind::Control { detail });
                    if let Some(peer) = abandoned {
                        if self.raw_remove(p, peer) {
                            self.record(
                                p,
                                EventKind::Topology {
                                    change: TopologyChange::RemoveLink { peer },
                                },
                            );
                        }
                    }
                }
            }
        }
    }

    fn unmark_safe(&mut self, p: ProcessId, q: ProcessId) {
        self.safe_out[p.index()].remove(&q);
        self.safe_in[q.index()].remove(&p);
    }

    /// First hop of a shortest safe path from `from` to `target`, found by
    /// a breadth-first search backwards from the target.
    fn next_hop(&mut self, from: ProcessId, target: ProcessId) -> Option<ProcessId> {
        if self.safe_out[from.index()].contains(&target) {
            return Some(target);
        }
        if !self.is_alive(target) {
            return None;
        }
        self.visit.resize(self.procs.len(), 0);
        self.visit_stamp = self.visit_stamp.wrapping_add(1);
        if self.visit_stamp == 0 {
            self.visit.iter_mut().for_each(|v| *v = 0);
            self.visit_stamp = 1;
        }
        let stamp = self.visit_stamp;
        let mut queue = std::collections::VecDeque::from([target]);
        self.visit[target.index()] = stamp;
        while let Some(u) = queue.pop_front() {
            for &w in &self.safe_in[u.index()] {
                if w == from {
                    return Some(u);
                }
                if self.alive[w.index()] && self.visit[w.index()] != stamp {
                    self.visit[w.index()] = stamp;
                    queue.push_back(w);
                }
            }
        }
        None
    }

    fn raw_add(&mut self, a: ProcessId, b: ProcessId) -> bool {
        let fresh = self.out[a.index()].insert(b);
        self.inn[b.index()].insert(a);
        fresh
    }

    fn raw_remove(&mut self, a: ProcessId, b: ProcessId) -> bool {
        let had = self.out[a.index()].remove(&b);
        self.inn[b.index()].remove(&a);
        had
    }

    fn add_link(&mut self, a: ProcessId, b: ProcessId) {
        if a == b || !self.is_alive(a) || !self.is_alive(b) || !self.raw_add(a, b) {
            return;
        }
        self.record(
            a,
            EventKind::Topology {
                change: TopologyChange::AddLink { peer: b },
            },
        );
        let mut out = Outbox::new();
        self.procs[a.index()].open_link(b, &mut out);
        self.apply(a, out);
    }

    fn remove_link(&mut self, a: ProcessId, b: ProcessId) {
        if !self.raw_remove(a, b) {
            return;
        }
        self.record(
            a,
            EventKind::Topology {
                change: TopologyChange::RemoveLink { peer: b },
            },
        );
        let mut out = Outbox::new();
        self.procs[a.index()].close_link(b, &mut out);
        self.apply(a, out);
        self.unmark_safe(a, b);
    }

    fn join(&mut self, contact: ProcessId) -> ProcessId {
        let joiner = self.spawn();
        self.record(
            joiner,
            EventKind::Topology {
                change: TopologyChange::Join { contact },
            },
        );
        let state = self.procs[contact.index()].join_state();
        self.procs[joiner.index()].install_join_state(state);
        self.add_link(joiner, contact);
        self.raw_add(contact, joiner);
        self.record(
            contact,
            EventKind::Topology {
                change: TopologyChange::AddLink { peer: joiner },
            },
        );
        let mut out = Outbox::new();
        self.procs[contact.index()].adopt_link(joiner, &mut out);
        self.apply(contact, out);
        if self.scenario.dynamics.shuffle_period_ms > 0 {
            let at = self.shuffle_gap();
            if at <= self.scenario.dynamics.until_ms {
                self.schedule(at, Event::Shuffle(joiner));
            }
        }
        joiner
    }

    fn leave(&mut self, p: ProcessId) {
        self.record(
            p,
            EventKind::Topology {
                change: TopologyChange::Leave,
            },
        );
        self.status[p.index()] = Status::Left;
        self.alive[p.index()] = false;
        let outgoing: Vec<ProcessId> = self.out[p.index()].iter().copied().collect();
        for q in outgoing {
            self.raw_remove(p, q);
            self.unmark_safe(p, q);
        }
        let incoming: Vec<ProcessId> = self.inn[p.index()].iter().copied().collect();
        for q in incoming {
            self.remove_link(q, p);
        }
    }

    fn crash(&mut self, p: ProcessId) {
        self.record(
            p,
            EventKind::Topology {
                change: TopologyChange::Crash,
            },
        );
        self.status[p.index()] = Status::Crashed;
        self.alive[p.index()] = false;
    }

    /// Would the overlay stay strongly connected without these arcs and
    /// this process? With `safe` set, the graph of safe links must too.
    fn stays_connected(&mut self, arcs: &[(ProcessId, ProcessId)], node: Option<ProcessId>, safe: bool) -> bool {
        if let Some(n) = node {
            self.alive[n.index()] = false;
        }
        let removed: Vec<_> = arcs.iter().filter(|(a, b)| self.raw_remove(*a, *b)).copied().collect();
        let mut ok = metrics::strongly_connected(&self.out, &self.inn, &self.alive);
        for (a, b) in removed {
            self.raw_add(a, b);
        }
        if ok && safe {
            let mut unsafe_now = Vec::new();
            for &(a, b) in arcs {
                if self.safe_out[a.index()].remove(&b) {
                    self.safe_in[b.index()].remove(&a);
                    unsafe_now.push((a, b));
                }
            }
            ok = metrics::strongly_connected(&self.safe_out, &self.safe_in, &self.alive);
            for (a, b) in unsafe_now {
                self.safe_out[a.index()].insert(b);
                self.safe_in[b.index()].insert(a);
            }
        }
        if let Some(n) = node {
            self.alive[n.index()] = true;
        }
        ok
    }

    fn script(&mut self, i: usize) -> Result<Option<ProcessId>, SimError> {
        let action = self.scenario.script[i].action.clone();
        let allow = self.scenario.limits.allow_partitions;
        let time = self.now;
        let partition = |what: String| SimError::Partition { time, action: what };
        let p = |x: u64| ProcessId(x);
        match action {
            ScriptAction::Broadcast { process } => {
                if self.is_alive(p(process)) {
                    self.broadcast(p(process));
                }
                Ok(Some(p(process)))
            }
            ScriptAction::AddLink { from, to, latency_ms } => {
                if let Some(ms) = latency_ms {
                    self.latency.set_fixed(p(from), p(to), ms);
                }
                self.add_link(p(from), p(to));
                Ok(Some(p(from)))
            }
            ScriptAction::RemoveLink { from, to } => {
                if !allow && !self.stays_connected(&[(p(from), p(to))], None, false) {
                    return Err(partition(format!("removing link {}->{}", p(from), p(to))));
                }
                self.remove_link(p(from), p(to));
                Ok(Some(p(from)))
            }
            ScriptAction::Join { process, contact } => {
                if process != self.procs.len() as u64 || !self.is_alive(p(contact)) {
                    return Err(SimError::Script {
                        time,
                        reason: format!(
                            "join of {} through {} (next free id is {})",
                            p(process),
                            p(contact),
                            self.procs.len()
                        ),
                    });
                }
                Ok(Some(self.join(p(contact))))
            }
            ScriptAction::Leave { process } | ScriptAction::Crash { process } => {
                let is_leave = matches!(self.scenario.script[i].action, ScriptAction::Leave { .. });
                if !self.is_alive(p(process)) {
                    return Ok(None);
                }
                if !allow && !self.stays_connected(&[], Some(p(process)), false) {
                    let verb = if is_leave { "departure" } else { "crash" };
                    return Err(partition(format!("{verb} of {}", p(process))));
                }
                if is_leave {
                    self.leave(p(process));
                } else {
                    self.crash(p(process));
                }
                Ok(None)
            }
            ScriptAction::DropPongs { from, to, count } => {
                *self.drop_pongs.entry((p(from), p(to))).or_insert(0) += count;
                Ok(None)
            }
        }
    }

    fn churn(&mut self) {
        let d = self.scenario.dynamics;
        let safe = d.preserve_safe_connectivity;
        let check = !self.scenario.limits.allow_partitions;
        let alive = self.alive_ids();
        let Some(&a) = alive.choose(&mut self.topo_rng) else {
            return;
        };
        let mut pick = self.topo_rng.random::<f64>() * d.churn_rate();
        let mut choose = |rate: f64| {
            let hit = pick < rate;
            pick -= rate;
            hit
        };
        if choose(d.add_link_rate) {
            let candidates: Vec<ProcessId> = alive
                .iter()
                .copied()
                .filter(|b| *b != a && !self.out[a.index()].contains(b))
                .collect();
            match candidates.choose(&mut self.topo_rng) {
                Some(&b) => self.add_link(a, b),
                None => self.stats.skipped_dynamics += 1,
            }
        } else if choose(d.remove_link_rate) {
            let links: Vec<ProcessId> = self.out[a.index()].iter().copied().collect();
            let b = links.choose(&mut self.topo_rng).copied();
            match b {
                Some(b) if links.len() >= 2 && (!check || self.stays_connected(&[(a, b)], None, safe)) => {
                    self.remove_link(a, b)
                }
                _ => self.stats.skipped_dynamics += 1,
            }
        } else if choose(d.join_rate) {
            self.join(a);
        } else if (alive.len() as u64) > d.min_processes && (!check || self.stays_connected(&[], Some(a), safe)) {
            self.leave(a);
        } else {
            self.stats.skipped_dynamics += 1;
        }
    }

    fn shuffle(&mut self, p: ProcessId) {
        let partners: Vec<ProcessId> = self.out[p.index()]
            .iter()
            .copied()
            .filter(|q| self.is_alive(*q))
            .collect();
        let Some(&q) = partners.choose(&mut self.topo_rng) else {
            return;
        };
        let view_p: Vec<ProcessId> = self.out[p.index()].iter().copied().collect();
        let view_q: Vec<ProcessId> = self.out[q.index()].iter().copied().collect();
        let fraction = self.scenario.dynamics.shuffle_fraction;
        let (new_p, new_q) = spray::exchange(p, &view_p, q, &view_q, fraction, &mut self.topo_rng);
        let mut removals = Vec::new();
        let mut additions = Vec::new();
        for (owner, old, new) in [(p, &view_p, &new_p), (q, &view_q, &new_q)] {
            removals.extend(old.iter().filter(|x| !new.contains(x)).map(|x| (owner, *x)));
            additions.extend(new.iter().filter(|x| !old.contains(x)).map(|x| (owner, *x)));
        }
        if !self.scenario.limits.allow_partitions {
            for &(a, b) in &additions {
                self.raw_add(a, b);
            }
            let safe = self.scenario.dynamics.preserve_safe_connectivity;
            let ok = self.stays_connected(&removals, None, safe);
            for &(a, b) in &additions {
                self.raw_remove(a, b);
            }
            if !ok {
                self.stats.skipped_dynamics += 1;
                return;
            }
        }
        for (a, b) in removals {
            self.remove_link(a, b);
        }
        for (a, b) in additions {
            self.add_link(a, b);
        }
    }

    fn sample(&mut self) {
        let alive = self.alive_ids();
        let k = self.scenario.sampling.sources.min(alive.len());
        let mut sources: Vec<usize> = alive
            .choose_multiple(&mut self.metric_rng, k)
            .map(|p| p.index())
            .collect();
        sources.sort_unstable();
        let safe = metrics::path_stats(&self.safe_out, &self.alive, &sources);
        let all = metrics::path_stats(&self.out, &self.alive, &sources);
        let (mut unsafe_links, mut buffered, mut max_buffer, mut pending) = (0usize, 0usize, 0usize, 0usize);
        for p in &alive {
            let proto = &self.procs[p.index()];
            for (_, len) in proto.buffering_links() {
                unsafe_links += 1;
                buffered += len;
                max_buffer = max_buffer.max(len);
            }
            pending += proto.pending_len();
        }
        let n = alive.len().max(1) as f64;
        self.rows.push(MetricsRow {
            time_ms: self.now,
            protocol: self.scenario.protocol,
            n_processes: alive.len() as u64,
            ramp_factor: self.latency.ramp().factor_at(self.now),
            avg_sp_safe: safe.mean,
            avg_sp_all: all.mean,
            avg_unsafe_links: unsafe_links as f64 / n,
            avg_buffer: if unsafe_links == 0 {
                0.0
            } else {
                buffered as f64 / unsafe_links as f64
            },
            max_buffer: max_buffer as u64,
            ctrl_bytes_payload: if self.stats.payload_sends == 0 {
                0.0
            } else {
                self.stats.control_bytes as f64 / self.stats.payload_sends as f64
            },
            vc_pending: pending as f64 / n,
            violations: 0,
            duplicates: 0,
            abandoned_links: self.stats.abandoned_links,
            ping_phases: self.stats.ping_phases,
            retries: self.stats.retries,
        });
    }
}
