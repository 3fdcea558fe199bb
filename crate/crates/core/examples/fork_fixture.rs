//! Two miners build on genesis at nearly the same moment. A regular node
//! hears one block first, the longest-chain pass keeps one branch, and the
//! fork report shows who accepted what.

use siov_sim::blockchain::{BlockchainConfig, KeyMessage, Ledger};
use siov_sim::engine::SimTime;
use siov_sim::mobility::{RsuId, RsuNode, RsuRole};

fn rsu(id: u32, role: RsuRole) -> RsuNode {
    RsuNode { rsu_id: RsuId(id), x: id as f64 * 500.0, y: 0.0, coverage_radius: 500.0, role, zone: 0 }
}

fn message(i: u64) -> KeyMessage {
    KeyMessage { msg_id: i, vehicle_id: format!("veh{i}"), speed: 12.0, x: 0.0, y: 0.0, generated_at: SimTime::ZERO, complete: true }
}

fn main() {
    let rsus = [rsu(0, RsuRole::Miner), rsu(1, RsuRole::Miner), rsu(2, RsuRole::Regular)];
    let mut ledger = Ledger::new(BlockchainConfig::default(), &rsus, &[120.0, 80.0]);
    ledger.verify_and_enqueue(&message(0), RsuId(2), SimTime::from_secs_f64(0.2)).unwrap();

    let a = ledger.package_block(0, SimTime::from_secs_f64(1.00));
    ledger.verify_and_enqueue(&message(1), RsuId(2), SimTime::from_secs_f64(1.01)).unwrap();
    let b = ledger.package_block(1, SimTime::from_secs_f64(1.03));

    for (node, block) in [(2, a), (2, b), (1, a), (0, b)] {
        println!("node {node} receives block {block}: {:?}", ledger.validate_and_append(node, block));
    }
    ledger.check_integrity().unwrap();

    let canonical = ledger.resolve_longest_chain();
    println!("canonical chain {:?} with transactions {:?}", canonical.blocks, canonical.tx_ids);
    println!("discarded blocks: {}", ledger.blocks_discarded(&canonical));
    ledger.write_fork_report(std::io::stdout()).unwrap();
}
