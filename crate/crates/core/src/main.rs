use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use causal_mesh::protocol::ProtocolKind;
use causal_mesh::runner::{self, RunnerError, BUNDLED};

/// Exit status: 0 clean, 1 protocol violations, 2 configuration or IO error.
const EXIT_VIOLATIONS: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(name = "causal-mesh", version, about = "Causal broadcast simulator and checker")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario; writes metrics.csv, verdict.json and manifest.json.
    Run {
        /// Scenario file, or the name of a bundled scenario.
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        protocol: Option<ProtocolKind>,
        /// Overrides the scenario's seed.
        #[arg(long, env = "CAUSAL_MESH_SEED")]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Replications with consecutive seeds, each in its own subdirectory.
        #[arg(long, default_value_t = 1)]
        reps: u32,
        #[arg(long)]
        emit_trace: bool,
        #[arg(long)]
        force: bool,
    },
    /// Run the scenario's grid of latency levels, protocols and seeds.
    Sweep {
        #[arg(long)]
        scenario: String,
        /// Restrict the grid to one protocol.
        #[arg(long)]
        protocol: Option<ProtocolKind>,
        #[arg(long, env = "CAUSAL_MESH_SEED")]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        reps: Option<u32>,
        #[arg(long)]
        force: bool,
    },
    /// Re-check a trace written by `run --emit-trace`.
    Verify {
        trace: PathBuf,
        /// Write the verdict here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// List bundled scenarios.
    Scenarios,
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}

fn verdict_code(clean: bool) -> ExitCode {
    if clean {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_VIOLATIONS)
    }
}

fn dispatch(command: Command) -> Result<ExitCode, RunnerError> {
    match command {
        Command::Run {
            scenario,
            protocol,
            seed,
            out,
            reps,
            emit_trace,
            force,
        } => {
            let mut base = runner::load_scenario(&scenario)?;
            runner::apply_overrides(&mut base, protocol, seed);
            let mut clean = true;
            for r in 0..reps.max(1) {
                let mut s = base.clone();
                s.seed = base.seed + u64::from(r);
                let dir = if reps > 1 {
                    out.join(format!("seed-{}", s.seed))
                } else {
                    out.clone()
                };
                let summary = runner::run_to_dir(s, &dir, emit_trace, force)?;
                let v = &summary.verdict;
                println!(
                    "{} {} seed={} violations={} duplicates={} missing={} breaches={} {:?} -> {}",
                    summary.manifest.scenario,
                    summary.manifest.protocol,
                    summary.manifest.seed,
                    v.causal_violations.len(),
                    v.duplicates.len(),
                    v.missing_deliveries.len(),
                    v.safe_link_breaches.len(),
                    summary.manifest.outcome,
                    dir.display()
                );
                for cv in &v.causal_violations {
                    println!(
                        "  violation: {} delivered {} before {}",
                        cv.process, cv.after, cv.before
                    );
                }
                clean &= summary.manifest.clean;
            }
            Ok(verdict_code(clean))
        }
        Command::Sweep {
            scenario,
            protocol,
            seed,
            out,
            reps,
            force,
        } => {
            let mut base = runner::load_scenario(&scenario)?;
            runner::apply_overrides(&mut base, None, seed);
            let only = protocol.map(|p| vec![p]);
            let cells = runner::sweep_cells(&base, reps, only.as_deref());
            let result = runner::sweep_to_dir(&base, &cells, &out, force)?;
            let m = &result.manifest;
            let dirty = m.cells.iter().filter(|c| c.clean == Some(false)).count();
            println!(
                "{}: {} cells, {} rows, {} with violations, {} failed -> {}",
                m.scenario,
                m.cells.len(),
                result.rows.len(),
                dirty,
                m.failures,
                out.display()
            );
            if m.failures > 0 {
                Ok(ExitCode::from(EXIT_CONFIG))
            } else {
                Ok(verdict_code(dirty == 0))
            }
        }
        Command::Verify { trace, out, force } => {
            let verdict = runner::verify_file(&trace)?;
            match out {
                Some(path) => runner::write_verdict(&path, &verdict, force)?,
                None => println!("{}", serde_json::to_string_pretty(&verdict).expect("serializable")),
            }
            Ok(verdict_code(verdict.is_clean()))
        }
        Command::Scenarios => {
            for (name, _) in BUNDLED {
                println!("{name}");
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
