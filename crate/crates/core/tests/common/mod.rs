#![allow(dead_code)]

use causal_mesh::pc::PingRouting;
use causal_mesh::protocol::ProtocolKind;
use causal_mesh::sim::{Dynamics, GuardParams, InitialTopology, LatencyRamp, Limits, Sampling, Scenario, Workload};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A random connected overlay with graceful churn and half-view exchanges,
/// link delays uniform in [0, 5000] ms.
pub fn random_dynamic_scenario(seed: u64, protocol: ProtocolKind) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x2545_f491_4f6c_dd1d));
    let n: u64 = rng.random_range(8..=64);
    let degree = rng.random_range(3..=5usize);
    let horizon = rng.random_range(30_000..=60_000u64);
    let messages = rng.random_range(10..=30u64);
    let max_size = if rng.random_bool(0.5) {
        Some(rng.random_range(2..=8usize))
    } else {
        None
    };
    Scenario {
        name: format!("random-{seed}"),
        seed,
        process_count: n,
        protocol,
        initial_topology: InitialTopology::RandomGraph { degree },
        latency_ramp: LatencyRamp {
            start_ms: 5000.0,
            end_ms: 5000.0,
            ramp_ms: 0,
            base_min: 0.0,
            base_max: 1.0,
        },
        dynamics: Dynamics {
            shuffle_period_ms: rng.random_range(10_000..=30_000),
            shuffle_fraction: 0.5,
            add_link_rate: rng.random_range(0.0..0.3),
            remove_link_rate: rng.random_range(0.0..0.3),
            join_rate: rng.random_range(0.0..0.1),
            leave_rate: rng.random_range(0.0..0.1),
            min_processes: 4,
            until_ms: horizon,
            preserve_safe_connectivity: true,
        },
        workload: Workload {
            rate_per_process_per_s: messages as f64 / (horizon as f64 / 1000.0) / n as f64,
            total_messages: messages,
            start_ms: 0,
            body_bytes: 0,
        },
        guard: GuardParams {
            max_size,
            max_retry: None,
            timeout_ms: None,
        },
        ping_routing: PingRouting::Flood,
        sampling: Sampling::default(),
        limits: Limits::default(),
        script: Vec::new(),
        direct_latency: Vec::new(),
        sweep: None,
    }
}
