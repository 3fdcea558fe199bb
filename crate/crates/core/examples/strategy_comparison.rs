//! Runs the congested default scenario under each link-selection strategy
//! and prints throughput and per-mode usage.
//!
//! `cargo run --release --example strategy_comparison -- 3` runs seeds 1..=3.

use siov_sim::config::ScenarioConfig;
use siov_sim::sim::{run, RunOptions};

fn main() {
    let seeds: u64 = std::env::args().nth(1).map(|s| s.parse().expect("seed count")).unwrap_or(1);
    for seed in 1..=seeds {
        for strategy in ["random", "max_sinr", "enhanced_max_sinr"] {
            let mut cfg = ScenarioConfig::default();
            cfg.seed = seed;
            cfg.connectivity.strategy = strategy.into();
            let m = run(&cfg, &RunOptions::default()).unwrap().metrics;
            let modes: Vec<String> = m.per_mode.iter().map(|(k, v)| format!("{k} {}/{}", v.attempts - v.failures, v.attempts)).collect();
            println!(
                "seed {seed} {strategy:<18} {:.4} M/ms, {:>6.1} TX/s, delivered {}/{}, {}",
                m.message_throughput_m_per_ms,
                m.tx_throughput_per_s,
                m.msgs_delivered,
                m.msgs_generated,
                modes.join(", ")
            );
        }
    }
}
