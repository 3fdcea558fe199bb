//! Repeated mining races between three miners, then the same race timing
//! seen from a single miner.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use siov_sim::blockchain::{run_consensus_round, sample_block_time, BlockchainConfig};

fn main() {
    let config = BlockchainConfig::default();
    let shares = [0.5, 0.3, 0.2];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let races = 10_000;
    let mut wins = [0u32; 3];
    let mut total_time = 0.0;
    for _ in 0..races {
        let r = run_consensus_round(&shares, config.block_interval_s, &mut rng).unwrap();
        wins[r.winner] += 1;
        total_time += r.block_time;
    }
    for (i, (s, w)) in shares.iter().zip(wins).enumerate() {
        println!("miner {i}: share {s:.2}, won {:.4}", w as f64 / races as f64);
    }
    println!("mean block time {:.3} s", total_time / races as f64);

    let solo: f64 = (0..races).map(|_| sample_block_time(0.5, config.block_interval_s, &mut rng).unwrap()).sum::<f64>() / races as f64;
    println!("a half-share miner racing alone: mean {solo:.3} s");
    println!("ceiling: {} tx per block, {:.1} TX/s", config.max_tx_per_block(), config.throughput_ceiling());
}
