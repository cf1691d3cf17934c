use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use causal_mesh::oracle::Verdict;
use causal_mesh::runner::{RunManifest, SweepManifest};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_causal-mesh"))
        .args(args)
        .env_remove("CAUSAL_MESH_SEED")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn fig2_exit_codes_by_protocol() {
    let dir = tempfile::tempdir().unwrap();
    let r = dir.path().join("r");
    let o = cli(&[
        "run",
        "--scenario",
        "fig2_violation",
        "--protocol",
        "rbroadcast",
        "--out",
        path(&r),
    ]);
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stderr));
    let v: Verdict = serde_json::from_slice(&fs::read(r.join("verdict.json")).unwrap()).unwrap();
    assert_eq!(v.causal_violations.len(), 1);
    assert!(String::from_utf8_lossy(&o.stdout).contains("p3 delivered p0#2 before p0#1"));

    let p = dir.path().join("p");
    let o = cli(&[
        "run",
        "--scenario",
        "fig2_violation",
        "--protocol",
        "pc",
        "--out",
        path(&p),
    ]);
    assert_eq!(code(&o), 0);
    let header = fs::read_to_string(p.join("metrics.csv")).unwrap();
    assert!(header.starts_with("time_ms,protocol,n_processes,ramp_factor,avg_sp_safe,avg_sp_all,avg_unsafe_links,avg_buffer,max_buffer,ctrl_bytes_payload,vc_pending,violations,duplicates,abandoned_links,ping_phases,retries\n"));
}

#[test]
fn refuses_to_overwrite_without_force() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path());
    assert_eq!(code(&cli(&["run", "--scenario", "fig4_repair", "--out", out])), 0);
    let o = cli(&["run", "--scenario", "fig4_repair", "--out", out]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("--force"));
    assert_eq!(
        code(&cli(&["run", "--scenario", "fig4_repair", "--out", out, "--force"])),
        0
    );
}

#[test]
fn invalid_scenario_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(
        &bad,
        "name = \"x\"\nprocess_count = 0\n[initial_topology]\nkind = \"clique\"\n",
    )
    .unwrap();
    let o = cli(&["run", "--scenario", path(&bad), "--out", path(&dir.path().join("o"))]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("process_count"));
    assert_eq!(code(&cli(&["run", "--scenario", "no_such_scenario"])), 2);
}

#[test]
fn seed_is_reproducible_and_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("s.toml");
    fs::write(
        &scenario,
        "name = \"small\"\nprocess_count = 12\n[initial_topology]\nkind = \"random_graph\"\ndegree = 3\n\
         [latency_ramp]\nstart_ms = 300.0\nend_ms = 300.0\n[dynamics]\nshuffle_period_ms = 2000\nuntil_ms = 8000\n\
         [workload]\nrate_per_process_per_s = 0.2\ntotal_messages = 15\n[sampling]\nevery_ms = 1000\n",
    )
    .unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for d in [&a, &b] {
        let o = cli(&[
            "run",
            "--scenario",
            path(&scenario),
            "--seed",
            "42",
            "--out",
            path(d),
            "--emit-trace",
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["metrics.csv", "trace.jsonl", "verdict.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let m: RunManifest = serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m.seed, 42);
    assert_eq!(m.config_sha256.len(), 64);

    // The environment variable is a fallback for --seed.
    let c = dir.path().join("c");
    let o = Command::new(env!("CARGO_BIN_EXE_causal-mesh"))
        .args(["run", "--scenario", path(&scenario), "--out", path(&c)])
        .env("CAUSAL_MESH_SEED", "42")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert_eq!(
        fs::read(a.join("metrics.csv")).unwrap(),
        fs::read(c.join("metrics.csv")).unwrap()
    );
}

#[test]
fn verify_matches_inline_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    assert_eq!(
        code(&cli(&[
            "run",
            "--scenario",
            "fig2_violation",
            "--protocol",
            "rbroadcast",
            "--out",
            path(&run),
            "--emit-trace"
        ])),
        1
    );
    let offline = dir.path().join("offline.json");
    let o = cli(&["verify", path(&run.join("trace.jsonl")), "--out", path(&offline)]);
    assert_eq!(code(&o), 1);
    assert_eq!(fs::read(run.join("verdict.json")).unwrap(), fs::read(&offline).unwrap());

    let empty = dir.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let o = cli(&["verify", path(&empty)]);
    assert_eq!(code(&o), 0);
    let v: Verdict = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v.is_clean());

    let corrupt = dir.path().join("corrupt.jsonl");
    let mut text = fs::read_to_string(run.join("trace.jsonl")).unwrap();
    text.push_str("{not json\n");
    fs::write(&corrupt, text).unwrap();
    let o = cli(&["verify", path(&corrupt)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line"));
}

#[test]
fn single_cell_sweep_equals_run() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("s.toml");
    fs::write(
        &scenario,
        "name = \"cell\"\nseed = 9\nprocess_count = 10\n[initial_topology]\nkind = \"random_graph\"\ndegree = 3\n\
         [latency_ramp]\nstart_ms = 200.0\nend_ms = 200.0\n[workload]\nrate_per_process_per_s = 0.5\ntotal_messages = 10\n\
         [sampling]\nevery_ms = 500\nuntil_ms = 3000\n",
    )
    .unwrap();
    let run = dir.path().join("run");
    let sweep = dir.path().join("sweep");
    assert_eq!(
        code(&cli(&["run", "--scenario", path(&scenario), "--out", path(&run)])),
        0
    );
    assert_eq!(
        code(&cli(&["sweep", "--scenario", path(&scenario), "--out", path(&sweep)])),
        0
    );
    assert_eq!(
        fs::read(run.join("metrics.csv")).unwrap(),
        fs::read(sweep.join("metrics.csv")).unwrap()
    );

    let reps = dir.path().join("reps");
    assert_eq!(
        code(&cli(&[
            "sweep",
            "--scenario",
            path(&scenario),
            "--reps",
            "5",
            "--out",
            path(&reps)
        ])),
        0
    );
    let m: SweepManifest = serde_json::from_slice(&fs::read(reps.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m.seeds, vec![9, 10, 11, 12, 13]);
    assert_eq!(m.cells.len(), 5);
    let rows = fs::read_to_string(reps.join("metrics.csv")).unwrap().lines().count() - 1;
    let single = fs::read_to_string(run.join("metrics.csv")).unwrap().lines().count() - 1;
    assert_eq!(rows, 5 * single);
}

#[test]
fn lists_bundled_scenarios() {
    let o = cli(&["scenarios"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    for name in [
        "fig2_violation",
        "fig4_repair",
        "fig5_bounded_buffers",
        "fig3_failures",
        "sec4_sweep",
    ] {
        assert!(text.contains(name));
    }
}
