//! Metrics rebuilt from the event log alone agree with the live counters.

use siov_sim::config::ScenarioConfig;
use siov_sim::metrics::{fold_event_log, message_throughput};
use siov_sim::sim::{run, RunOptions};

#[test]
fn folding_the_log_reproduces_run_metrics() {
    let mut cfg = ScenarioConfig::default();
    cfg.traffic.n_vehicles = 80;
    cfg.sim_time_s = 8.0;
    cfg.seed = 11;
    for strategy in ["random", "enhanced_max_sinr"] {
        cfg.connectivity.strategy = strategy.into();
        let out = run(&cfg, &RunOptions { record_log: true, ..RunOptions::default() }).unwrap();
        let totals = fold_event_log(&out.log);
        let m = &out.metrics;
        assert_eq!(totals.delivered, m.msgs_delivered);
        assert_eq!(totals.canonical_tx, m.canonical_tx);
        assert_eq!(totals.blocks_mined, m.blocks_mined);
        assert!((totals.sum_latency_ms - m.sum_latency_ms).abs() <= 1e-12 * m.sum_latency_ms.max(1.0));
        let refolded = message_throughput(totals.delivered, totals.sum_latency_ms).unwrap();
        assert!((refolded - m.message_throughput_m_per_ms).abs() <= 1e-12 * refolded.max(1.0));
    }
}
