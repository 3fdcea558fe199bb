//! Sweeps the block interval on a shortened default scenario and prints the
//! across-seed aggregate.

use siov_sim::config::ScenarioConfig;
use siov_sim::metrics::{write_aggregate_csv, SweepAxis};
use siov_sim::sweep::{run_sweep, SweepSpec};

fn main() {
    let mut base = ScenarioConfig::default();
    base.sim_time_s = 20.0;
    let spec = SweepSpec {
        axis: SweepAxis::BlockInterval,
        values: vec![0.5, 1.0, 2.0, 2.7, 4.0],
        seeds: vec![1, 2, 3],
        strategies: vec!["enhanced_max_sinr".into()],
    };
    let jobs = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let res = run_sweep(&base, &spec, jobs).unwrap();
    for m in &res.runs {
        println!("T_G {:>3} s seed {}: {:>6.1} TX/s, {} of {} blocks discarded", m.block_interval_s, m.seed, m.tx_throughput_per_s, m.blocks_discarded, m.blocks_mined);
    }
    write_aggregate_csv(&res.aggregate, std::io::stdout()).unwrap();
}
