//! Overlay-shape and cost measurements taken from simulator snapshots and
//! traces.

use std::collections::{BTreeSet, VecDeque};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::protocol::{ProcessId, ProtocolKind};
use crate::trace::{EventKind, Trace};

/// Outgoing arcs per process, indexed by process id.
pub type Adjacency = [BTreeSet<ProcessId>];

const UNSEEN: u32 = u32::MAX;

/// Hop distances from `source` over arcs between alive processes.
pub fn bfs(out: &Adjacency, alive: &[bool], source: usize, dist: &mut Vec<u32>) {
    dist.clear();
    dist.resize(out.len(), UNSEEN);
    if !alive[source] {
        return;
    }
    let mut queue = VecDeque::from([source]);
    dist[source] = 0;
    while let Some(u) = queue.pop_front() {
        for v in &out[u] {
            let v = v.index();
            if alive[v] && dist[v] == UNSEEN {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PathStats {
    /// Mean hop count over reachable (source, target) pairs, target != source.
    pub mean: f64,
    pub reachable: u64,
    pub unreachable: u64,
}

pub fn path_stats(out: &Adjacency, alive: &[bool], sources: &[usize]) -> PathStats {
    let mut dist = Vec::new();
    let (mut sum, mut reachable, mut unreachable) = (0u64, 0u64, 0u64);
    for &s in sources {
        bfs(out, alive, s, &mut dist);
        for (t, d) in dist.iter().enumerate() {
            if t == s || !alive[t] {
                continue;
            }
            if *d == UNSEEN {
                unreachable += 1;
            } else {
                sum += u64::from(*d);
                reachable += 1;
            }
        }
    }
    PathStats {
        mean: if reachable == 0 {
            0.0
        } else {
            sum as f64 / reachable as f64
        },
        reachable,
        unreachable,
    }
}

/// Every alive process reaches every other one, following arcs forward.
pub fn strongly_connected(out: &Adjacency, inn: &Adjacency, alive: &[bool]) -> bool {
    let Some(root) = alive.iter().position(|a| *a) else {
        return true;
    };
    let total = alive.iter().filter(|a| **a).count();
    let mut dist = Vec::new();
    for adj in [out, inn] {
        bfs(adj, alive, root, &mut dist);
        if dist.iter().filter(|d| **d != UNSEEN).count() != total {
            return false;
        }
    }
    true
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|a, b| xs[*a].total_cmp(&xs[*b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[order[k]] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties. Returns 0 when
/// either side is constant.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let (mut vx, mut vy) = (0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mx) * (b - my);
        vx += (a - mx).powi(2);
        vy += (b - my).powi(2);
    }
    if vx == 0.0 || vy == 0.0 {
        0.0
    } else {
        cov / (vx * vy).sqrt()
    }
}

/// Control bytes carried by payload sends.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OverheadStats {
    pub sends: u64,
    pub total_bytes: u64,
    pub distinct_sizes: BTreeSet<u32>,
}

impl OverheadStats {
    pub fn mean(&self) -> f64 {
        if self.sends == 0 {
            0.0
        } else {
            self.total_bytes as f64 / self.sends as f64
        }
    }
}

pub fn overhead_stats(trace: &Trace) -> OverheadStats {
    let mut s = OverheadStats::default();
    for e in &trace.events {
        if let EventKind::Send { control_bytes, .. } = e.kind {
            s.sends += 1;
            s.total_bytes += u64::from(control_bytes);
            s.distinct_sizes.insert(control_bytes);
        }
    }
    s
}

/// One line of the metrics CSV. Field order is the column order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub time_ms: u64,
    pub protocol: ProtocolKind,
    pub n_processes: u64,
    pub ramp_factor: f64,
    pub avg_sp_safe: f64,
    pub avg_sp_all: f64,
    pub avg_unsafe_links: f64,
    pub avg_buffer: f64,
    pub max_buffer: u64,
    pub ctrl_bytes_payload: f64,
    pub vc_pending: f64,
    pub violations: u64,
    pub duplicates: u64,
    pub abandoned_links: u64,
    pub ping_phases: u64,
    pub retries: u64,
}

pub fn write_csv<W: Write>(rows: &[MetricsRow], w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    if rows.is_empty() {
        out.write_record(CSV_COLUMNS)?;
    }
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub const CSV_COLUMNS: [&str; 16] = [
    "time_ms",
    "protocol",
    "n_processes",
    "ramp_factor",
    "avg_sp_safe",
    "avg_sp_all",
    "avg_unsafe_links",
    "avg_buffer",
    "max_buffer",
    "ctrl_bytes_payload",
    "vc_pending",
    "violations",
    "duplicates",
    "abandoned_links",
    "ping_phases",
    "retries",
];
