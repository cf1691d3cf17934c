//! Deterministic discrete-event simulator.

mod engine;
mod latency;
mod scenario;
pub mod spray;

pub use engine::{Outcome, RunOutput, RunStats, SimError, Simulation};
pub use latency::LatencyModel;
pub use scenario::{
    DirectLatency, Dynamics, Edge, GuardParams, InitialTopology, LatencyRamp, Limits, Sampling, Scenario,
    ScenarioError, ScriptAction, ScriptStep, SweepGrid, Workload,
};
