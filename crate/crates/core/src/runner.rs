//! File-level plumbing behind the command line: scenario lookup, output
//! directories, manifests, sweeps and offline verification.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::metrics::{self, MetricsRow};
use crate::oracle::{self, Verdict};
use crate::protocol::ProtocolKind;
use crate::sim::{LatencyRamp, Outcome, RunOutput, RunStats, Scenario, ScenarioError, SimError, Simulation};
use crate::trace::{Trace, TraceError};

pub const BUNDLED: [(&str, &str); 5] = [
    ("fig2_violation", include_str!("../scenarios/fig2_violation.toml")),
    ("fig4_repair", include_str!("../scenarios/fig4_repair.toml")),
    (
        "fig5_bounded_buffers",
        include_str!("../scenarios/fig5_bounded_buffers.toml"),
    ),
    ("fig3_failures", include_str!("../scenarios/fig3_failures.toml")),
    ("sec4_sweep", include_str!("../scenarios/sec4_sweep.toml")),
];

pub const METRICS_FILE: &str = "metrics.csv";
pub const VERDICT_FILE: &str = "verdict.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRACE_FILE: &str = "trace.jsonl";

#[derive(Debug, thiserror::Error)]
pub enum RunnerError {
    #[error("no scenario file or bundled scenario named {0:?} (bundled: {1})")]
    UnknownScenario(String, String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("{0} already exists; pass --force to overwrite")]
    Exists(PathBuf),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("writing csv: {0}")]
    Csv(#[from] csv::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunnerError + '_ {
    move |source| RunnerError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn bundled(name: &str) -> Option<&'static str> {
    let name = name.strip_suffix(".toml").unwrap_or(name);
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

/// Resolves a path first, then a bundled scenario name.
pub fn load_scenario(spec: &str) -> Result<Scenario, RunnerError> {
    let path = Path::new(spec);
    if path.is_file() {
        return Ok(Scenario::from_path(path)?);
    }
    match bundled(spec) {
        Some(text) => Ok(Scenario::from_toml(text)?),
        None => {
            let names: Vec<&str> = BUNDLED.iter().map(|(n, _)| *n).collect();
            Err(RunnerError::UnknownScenario(spec.to_string(), names.join(", ")))
        }
    }
}

/// SHA-256 of the effective scenario, after every override is applied.
pub fn config_hash(scenario: &Scenario) -> String {
    hex::encode(Sha256::digest(scenario.to_toml().as_bytes()))
}

pub fn apply_overrides(scenario: &mut Scenario, protocol: Option<ProtocolKind>, seed: Option<u64>) {
    if let Some(p) = protocol {
        scenario.protocol = p;
    }
    if let Some(s) = seed {
        scenario.seed = s;
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub scenario: String,
    pub protocol: ProtocolKind,
    pub seed: u64,
    pub config_sha256: String,
    pub outcome: Outcome,
    pub clean: bool,
    pub stats: RunStats,
    pub files: Vec<String>,
    pub version: String,
}

pub struct RunSummary {
    pub manifest: RunManifest,
    pub verdict: Verdict,
}

fn check_writable(dir: &Path, files: &[&str], force: bool) -> Result<(), RunnerError> {
    for f in files {
        let p = dir.join(f);
        if p.exists() && !force {
            return Err(RunnerError::Exists(p));
        }
    }
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), RunnerError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<(), RunnerError> {
    let file = File::create(path).map_err(io_err(path))?;
    metrics::write_csv(rows, BufWriter::new(file))?;
    Ok(())
}

pub fn write_trace(path: &Path, trace: &Trace) -> Result<(), RunnerError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    trace.write_jsonl(&mut w).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

/// Runs one scenario and writes metrics, verdict, manifest and optionally
/// the trace into `out`.
pub fn run_to_dir(scenario: Scenario, out: &Path, emit_trace: bool, force: bool) -> Result<RunSummary, RunnerError> {
    let mut files = vec![METRICS_FILE, VERDICT_FILE, MANIFEST_FILE];
    if emit_trace {
        files.push(TRACE_FILE);
    }
    check_writable(out, &files, force)?;
    let hash = config_hash(&scenario);
    let (name, protocol, seed) = (scenario.name.clone(), scenario.protocol, scenario.seed);
    let RunOutput {
        trace,
        verdict,
        rows,
        outcome,
        stats,
    } = Simulation::run_scenario(scenario)?;
    write_metrics(&out.join(METRICS_FILE), &rows)?;
    write_json(&out.join(VERDICT_FILE), &verdict)?;
    if emit_trace {
        write_trace(&out.join(TRACE_FILE), &trace)?;
    }
    let manifest = RunManifest {
        scenario: name,
        protocol,
        seed,
        config_sha256: hash,
        outcome,
        clean: verdict.is_clean(),
        stats,
        files: files.iter().map(|f| f.to_string()).collect(),
        version: env!("CARGO_PKG_VERSION").to_string(),
    };
    write_json(&out.join(MANIFEST_FILE), &manifest)?;
    Ok(RunSummary { manifest, verdict })
}

/// One point of a sweep grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub protocol: ProtocolKind,
    pub process_count: u64,
    pub ramp_level_ms: f64,
    pub seed: u64,
}

impl SweepCell {
    pub fn scenario(&self, base: &Scenario) -> Scenario {
        let mut s = base.clone();
        s.protocol = self.protocol;
        s.process_count = self.process_count;
        s.seed = self.seed;
        s.latency_ramp = LatencyRamp {
            base_min: base.latency_ramp.base_min,
            base_max: base.latency_ramp.base_max,
            ..LatencyRamp::constant(self.ramp_level_ms)
        };
        s.sweep = None;
        s
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CellReport {
    #[serde(flatten)]
    pub cell: SweepCell,
    /// Half-open range of this cell's rows in the metrics CSV.
    pub rows: (usize, usize),
    pub outcome: Option<Outcome>,
    pub clean: Option<bool>,
    pub violations: Option<usize>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepManifest {
    pub scenario: String,
    pub config_sha256: String,
    pub seeds: Vec<u64>,
    pub cells: Vec<CellReport>,
    pub failures: usize,
    pub version: String,
}

pub struct SweepResult {
    pub manifest: SweepManifest,
    pub rows: Vec<MetricsRow>,
}

/// Cells in a fixed order: process count, then ramp level, then
/// protocol, then replication. Replication `r` uses seed `base_seed + r`.
pub fn sweep_cells(base: &Scenario, reps: Option<u32>, protocols: Option<&[ProtocolKind]>) -> Vec<SweepCell> {
    let grid = base.sweep.clone();
    let levels = grid
        .as_ref()
        .map(|g| g.ramp_levels_ms.clone())
        .unwrap_or_else(|| vec![base.latency_ramp.end_ms]);
    let kinds: Vec<ProtocolKind> = match (protocols, &grid) {
        (Some(p), _) => p.to_vec(),
        (None, Some(g)) => g.protocols.clone(),
        (None, None) => vec![base.protocol],
    };
    let counts = grid
        .as_ref()
        .map(|g| g.process_counts.clone())
        .filter(|c| !c.is_empty())
        .unwrap_or_else(|| vec![base.process_count]);
    let reps = reps.or(grid.as_ref().map(|g| g.reps)).unwrap_or(1).max(1);
    let mut cells = Vec::new();
    for &n in &counts {
        for &level in &levels {
            for &protocol in &kinds {
                for r in 0..reps {
                    cells.push(SweepCell {
                        protocol,
                        process_count: n,
                        ramp_level_ms: level,
                        seed: base.seed + u64::from(r),
                    });
                }
            }
        }
    }
    cells
}

/// Runs every cell (in parallel) and aggregates rows in cell order. A
/// failing cell is recorded and does not stop the others.
pub fn sweep(base: &Scenario, cells: &[SweepCell]) -> SweepResult {
    let results: Vec<Result<RunOutput, SimError>> = cells
        .par_iter()
        .map(|c| Simulation::run_scenario(c.scenario(base)))
        .collect();
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    let mut failures = 0;
    for (cell, result) in cells.iter().zip(results) {
        let start = rows.len();
        let report = match result {
            Ok(out) => {
                rows.extend(out.rows);
                CellReport {
                    cell: cell.clone(),
                    rows: (start, rows.len()),
                    outcome: Some(out.outcome),
                    clean: Some(out.verdict.is_clean()),
                    violations: Some(out.verdict.causal_violations.len()),
                    error: None,
                }
            }
            Err(e) => {
                failures += 1;
                CellReport {
                    cell: cell.clone(),
                    rows: (start, start),
                    outcome: None,
                    clean: None,
                    violations: None,
                    error: Some(e.to_string()),
                }
            }
        };
        reports.push(report);
    }
    let mut seeds: Vec<u64> = cells.iter().map(|c| c.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    SweepResult {
        manifest: SweepManifest {
            scenario: base.name.clone(),
            config_sha256: config_hash(base),
            seeds,
            cells: reports,
            failures,
            version: env!("CARGO_PKG_VERSION").to_string(),
        },
        rows,
    }
}

pub fn sweep_to_dir(base: &Scenario, cells: &[SweepCell], out: &Path, force: bool) -> Result<SweepResult, RunnerError> {
    check_writable(out, &[METRICS_FILE, MANIFEST_FILE], force)?;
    let result = sweep(base, cells);
    write_metrics(&out.join(METRICS_FILE), &result.rows)?;
    write_json(&out.join(MANIFEST_FILE), &result.manifest)?;
    Ok(result)
}

/// Re-checks a trace file. An empty file is a vacuous, clean trace.
pub fn verify_file(path: &Path) -> Result<Verdict, RunnerError> {
    let meta = fs::metadata(path).map_err(io_err(path))?;
    if meta.len() == 0 {
        return Ok(Verdict::default());
    }
    let file = File::open(path).map_err(io_err(path))?;
    let trace = Trace::read_jsonl(BufReader::new(file))?;
    oracle::verify(&trace).map_err(|e| RunnerError::Sim(SimError::Oracle(e)))
}

pub fn write_verdict(path: &Path, verdict: &Verdict, force: bool) -> Result<(), RunnerError> {
    if path.exists() && !force {
        return Err(RunnerError::Exists(path.to_path_buf()));
    }
    write_json(path, verdict)
}
