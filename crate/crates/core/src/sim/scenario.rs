use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::pc::{GuardConfig, PingRouting};
use crate::protocol::{ProcessId, ProtocolKind};

/// Declarative description of one simulation run. Stored as TOML; field
/// names below are the file's keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub process_count: u64,
    #[serde(default = "default_protocol")]
    pub protocol: ProtocolKind,
    pub initial_topology: InitialTopology,
    #[serde(default)]
    pub latency_ramp: LatencyRamp,
    #[serde(default)]
    pub dynamics: Dynamics,
    #[serde(default)]
    pub workload: Workload,
    #[serde(default)]
    pub guard: GuardParams,
    #[serde(default)]
    pub ping_routing: PingRouting,
    #[serde(default)]
    pub sampling: Sampling,
    #[serde(default)]
    pub limits: Limits,
    #[serde(default)]
    pub script: Vec<ScriptStep>,
    /// Per-pair overrides for the channel pongs travel on.
    #[serde(default)]
    pub direct_latency: Vec<DirectLatency>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepGrid>,
}

fn default_protocol() -> ProtocolKind {
    ProtocolKind::Pc
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialTopology {
    Clique,
    /// A bidirectional ring plus random arcs until every process has
    /// `degree` outgoing links. Strongly connected by construction.
    RandomGraph {
        degree: usize,
    },
    Explicit {
        edges: Vec<Edge>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Edge {
    pub from: u64,
    pub to: u64,
    /// Fixed delay for this link; otherwise the latency ramp applies.
    #[serde(default)]
    pub latency_ms: Option<u64>,
}

/// Link delay is `base(link) * factor(t)`. The base is drawn once per link
/// from `[base_min, base_max]`; the factor moves linearly from `start_ms`
/// to `end_ms` over `ramp_ms` and then stays at `end_ms`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencyRamp {
    #[serde(default)]
    pub start_ms: f64,
    #[serde(default)]
    pub end_ms: f64,
    #[serde(default)]
    pub ramp_ms: u64,
    #[serde(default = "default_base_min")]
    pub base_min: f64,
    #[serde(default = "default_base_max")]
    pub base_max: f64,
}

fn default_base_min() -> f64 {
    0.5
}

fn default_base_max() -> f64 {
    1.0
}

impl Default for LatencyRamp {
    fn default() -> Self {
        LatencyRamp {
            start_ms: 0.0,
            end_ms: 0.0,
            ramp_ms: 0,
            base_min: default_base_min(),
            base_max: default_base_max(),
        }
    }
}

impl LatencyRamp {
    pub fn constant(level_ms: f64) -> Self {
        LatencyRamp {
            start_ms: level_ms,
            end_ms: level_ms,
            ..Self::default()
        }
    }

    pub fn factor_at(&self, t: u64) -> f64 {
        if self.ramp_ms == 0 || t >= self.ramp_ms {
            return self.end_ms;
        }
        self.start_ms + (self.end_ms - self.start_ms) * (t as f64 / self.ramp_ms as f64)
    }

    pub fn ceiling(&self) -> f64 {
        self.start_ms.max(self.end_ms) * self.base_max
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dynamics {
    /// Mean spacing of a process's view exchanges; each process waits a
    /// uniform time in `[period/2, period]`. Zero disables exchanges.
    #[serde(default)]
    pub shuffle_period_ms: u64,
    #[serde(default = "default_fraction")]
    pub shuffle_fraction: f64,
    /// Random churn, in events per virtual second across the network.
    #[serde(default)]
    pub add_link_rate: f64,
    #[serde(default)]
    pub remove_link_rate: f64,
    #[serde(default)]
    pub join_rate: f64,
    #[serde(default)]
    pub leave_rate: f64,
    #[serde(default = "default_min_processes")]
    pub min_processes: u64,
    /// No random dynamics are scheduled after this time.
    #[serde(default)]
    pub until_ms: u64,
    /// Skip random removals that would disconnect the graph of safe links.
    /// Without it a process can lose every safe in-link and its pings never
    /// arrive.
    #[serde(default = "yes")]
    pub preserve_safe_connectivity: bool,
}

fn default_fraction() -> f64 {
    0.5
}

fn yes() -> bool {
    true
}

fn default_min_processes() -> u64 {
    2
}

impl Default for Dynamics {
    fn default() -> Self {
        Dynamics {
            shuffle_period_ms: 0,
            shuffle_fraction: default_fraction(),
            add_link_rate: 0.0,
            remove_link_rate: 0.0,
            join_rate: 0.0,
            leave_rate: 0.0,
            min_processes: default_min_processes(),
            until_ms: 0,
            preserve_safe_connectivity: true,
        }
    }
}

impl Dynamics {
    pub fn churn_rate(&self) -> f64 {
        self.add_link_rate + self.remove_link_rate + self.join_rate + self.leave_rate
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Workload {
    /// Random broadcasts, per alive process per virtual second.
    #[serde(default)]
    pub rate_per_process_per_s: f64,
    #[serde(default)]
    pub total_messages: u64,
    #[serde(default)]
    pub start_ms: u64,
    #[serde(default)]
    pub body_bytes: usize,
}

/// Buffer-guard knobs as written in scenario files. A missing timeout
/// means "derive one from the latency ceiling"; zero disables timers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuardParams {
    #[serde(default)]
    pub max_size: Option<usize>,
    #[serde(default)]
    pub max_retry: Option<u32>,
    #[serde(default)]
    pub timeout_ms: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sampling {
    /// Zero disables periodic snapshots; a final one is always taken.
    #[serde(default)]
    pub every_ms: u64,
    #[serde(default)]
    pub start_ms: u64,
    /// Snapshots stop after this time; zero means the dynamics horizon.
    #[serde(default)]
    pub until_ms: u64,
    #[serde(default = "default_sources")]
    pub sources: usize,
}

fn default_sources() -> usize {
    16
}

impl Default for Sampling {
    fn default() -> Self {
        Sampling {
            every_ms: 0,
            start_ms: 0,
            until_ms: 0,
            sources: default_sources(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Limits {
    /// Hard stop; a run still busy at this point is reported non-quiescent.
    #[serde(default = "default_max_time")]
    pub max_time_ms: u64,
    #[serde(default)]
    pub allow_partitions: bool,
}

fn default_max_time() -> u64 {
    24 * 3_600_000
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            max_time_ms: default_max_time(),
            allow_partitions: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScriptStep {
    pub at_ms: u64,
    #[serde(flatten)]
    pub action: ScriptAction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum ScriptAction {
    Broadcast {
        process: u64,
    },
    AddLink {
        from: u64,
        to: u64,
        #[serde(default)]
        latency_ms: Option<u64>,
    },
    RemoveLink {
        from: u64,
        to: u64,
    },
    /// `process` must be the next unused id.
    Join {
        process: u64,
        contact: u64,
    },
    Leave {
        process: u64,
    },
    Crash {
        process: u64,
    },
    /// Lose the next `count` pongs sent by `from` to `to`.
    DropPongs {
        from: u64,
        to: u64,
        count: u32,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirectLatency {
    pub from: u64,
    pub to: u64,
    pub latency_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub ramp_levels_ms: Vec<f64>,
    pub protocols: Vec<ProtocolKind>,
    #[serde(default)]
    pub process_counts: Vec<u64>,
    #[serde(default = "default_reps")]
    pub reps: u32,
}

fn default_reps() -> u32 {
    1
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot read scenario {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("scenario syntax: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Scenario, ScenarioError> {
        let s: Scenario = toml::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn from_path(path: &Path) -> Result<Scenario, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |msg: String| Err(ScenarioError::Invalid(msg));
        let n = self.process_count;
        if n == 0 {
            return bad("process_count must be at least 1".into());
        }
        match &self.initial_topology {
            InitialTopology::RandomGraph { degree } => {
                if *degree as u64 >= n {
                    return bad(format!("degree {degree} needs more than {n} processes"));
                }
            }
            InitialTopology::Explicit { edges } => {
                for e in edges {
                    if e.from >= n || e.to >= n || e.from == e.to {
                        return bad(format!(
                            "edge {}->{} is not between two distinct processes",
                            e.from, e.to
                        ));
                    }
                }
            }
            InitialTopology::Clique => {}
        }
        let r = &self.latency_ramp;
        let finite = [r.start_ms, r.end_ms, r.base_min, r.base_max];
        if finite.iter().any(|v| !v.is_finite() || *v < 0.0) || r.base_min > r.base_max {
            return bad("latency ramp values must be finite, non-negative, base_min <= base_max".into());
        }
        let d = &self.dynamics;
        if !(d.shuffle_fraction > 0.0 && d.shuffle_fraction <= 1.0) {
            return bad("shuffle_fraction must be in (0, 1]".into());
        }
        let rates = [d.add_link_rate, d.remove_link_rate, d.join_rate, d.leave_rate];
        if rates.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return bad("churn rates must be finite and non-negative".into());
        }
        let w = &self.workload;
        if !w.rate_per_process_per_s.is_finite() || w.rate_per_process_per_s < 0.0 {
            return bad("workload rate must be finite and non-negative".into());
        }
        let mut next_id = n;
        let mut steps: Vec<&ScriptStep> = self.script.iter().collect();
        steps.sort_by_key(|s| s.at_ms);
        for step in steps {
            let known = |p: u64| p < next_id;
            let ok = match &step.action {
                ScriptAction::Broadcast { process }
                | ScriptAction::Leave { process }
                | ScriptAction::Crash { process } => known(*process),
                ScriptAction::AddLink { from, to, .. }
                | ScriptAction::RemoveLink { from, to }
                | ScriptAction::DropPongs { from, to, .. } => known(*from) && known(*to) && from != to,
                ScriptAction::Join { process, contact } => {
                    let ok = *process == next_id && known(*contact);
                    next_id += 1;
                    ok
                }
            };
            if !ok {
                return bad(format!(
                    "script step at {} ms refers to unknown or invalid processes: {:?}",
                    step.at_ms, step.action
                ));
            }
        }
        if let Some(grid) = &self.sweep {
            if grid.ramp_levels_ms.is_empty() || grid.protocols.is_empty() || grid.reps == 0 {
                return bad("sweep grid needs ramp levels, protocols and reps >= 1".into());
            }
            if grid.ramp_levels_ms.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return bad("sweep ramp levels must be finite and non-negative".into());
            }
        }
        Ok(())
    }

    /// Guard configuration with the timeout resolved: an explicit zero turns
    /// timers off, a missing value becomes four times the latency ceiling
    /// times a diameter estimate (at least one second).
    pub fn resolved_guard(&self) -> GuardConfig {
        let timeout_ms = match self.guard.timeout_ms {
            Some(0) => None,
            Some(t) => Some(t),
            None => {
                let fixed = self
                    .fixed_latencies()
                    .map(|(_, _, l)| l)
                    .chain(self.direct_latency.iter().map(|d| d.latency_ms))
                    .max()
                    .unwrap_or(0) as f64;
                let ceiling = self.latency_ramp.ceiling().max(fixed);
                let estimate = (4.0 * ceiling * self.diameter_estimate() as f64).ceil() as u64;
                Some(estimate.max(1000))
            }
        };
        GuardConfig {
            max_size: self.guard.max_size,
            max_retry: self.guard.max_retry,
            timeout_ms,
        }
    }

    fn fixed_latencies(&self) -> impl Iterator<Item = (ProcessId, ProcessId, u64)> + '_ {
        let edges = match &self.initial_topology {
            InitialTopology::Explicit { edges } => edges.as_slice(),
            _ => &[],
        };
        let scripted = self.script.iter().filter_map(|s| match s.action {
            ScriptAction::AddLink {
                from,
                to,
                latency_ms: Some(l),
            } => Some((ProcessId(from), ProcessId(to), l)),
            _ => None,
        });
        edges
            .iter()
            .filter_map(|e| e.latency_ms.map(|l| (ProcessId(e.from), ProcessId(e.to), l)))
            .chain(scripted)
    }

    pub fn diameter_estimate(&self) -> u64 {
        let n = self.process_count.max(2) as f64;
        match &self.initial_topology {
            InitialTopology::Clique => 2,
            InitialTopology::RandomGraph { degree } => {
                let d = (*degree).max(2) as f64;
                ((n.ln() / d.ln()).ceil() as u64 + 1).max(2)
            }
            InitialTopology::Explicit { .. } => (self.process_count.saturating_sub(1)).max(2),
        }
    }
}
