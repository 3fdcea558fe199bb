//! Consensus layer: message verification into transactions, the exponential
//! mining race, gas-limited packaging, broadcast, hash-link validation and
//! longest-chain resolution.
//!
//! Every RSU is a node with a local chain and a pool view. A node's pool view
//! is every transaction created so far that is not on its own chain, so a
//! transaction enters all pools the instant it is created and leaves a pool
//! only when a block holding it joins that node's chain.

use std::collections::BTreeSet;
use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{sample_exponential, SimTime};
use crate::mobility::{RsuId, RsuNode, RsuRole};

pub type TxId = u64;
pub type BlockId = u64;
pub const GENESIS: BlockId = 0;

#[derive(Debug, Error, PartialEq)]
pub enum BlockchainError {
    #[error("message {msg_id} from {vehicle_id} arrived incomplete")]
    IncompleteMessage { msg_id: u64, vehicle_id: String },
    #[error("chain integrity violated at node {node}, position {position}: {reason}")]
    Integrity { node: usize, position: usize, reason: String },
    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("no miners")]
    NoMiners,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlockchainConfig {
    pub n_miners: usize,
    pub block_interval_s: f64,
    pub receive_time_s: f64,
    pub gas_limit: u64,
    pub gas_per_tx: u64,
    pub hash_power_mean: f64,
    pub hash_power_sd: f64,
}

impl Default for BlockchainConfig {
    fn default() -> Self {
        BlockchainConfig {
            n_miners: 30,
            block_interval_s: 2.7,
            receive_time_s: 0.25,
            gas_limit: 30_000_000,
            gas_per_tx: 21_000,
            hash_power_mean: 100.0,
            hash_power_sd: 20.0,
        }
    }
}

impl BlockchainConfig {
    /// Transactions per block at constant gas.
    pub fn max_tx_per_block(&self) -> u64 {
        self.gas_limit.checked_div(self.gas_per_tx).unwrap_or(0)
    }

    /// `⌊gas_limit/gas_per_tx⌋ / T_G`.
    pub fn throughput_ceiling(&self) -> f64 {
        self.max_tx_per_block() as f64 / self.block_interval_s
    }
}

/// A vehicle report as it reaches an RSU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyMessage {
    pub msg_id: u64,
    pub vehicle_id: String,
    pub speed: f64,
    pub x: f64,
    pub y: f64,
    pub generated_at: SimTime,
    /// Set by the connection layer only when every hop delivered the payload.
    pub complete: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transaction {
    pub tx_id: TxId,
    pub msg_id: u64,
    pub vehicle_id: String,
    pub speed: f64,
    pub x: f64,
    pub y: f64,
    pub generated_at: SimTime,
    pub created_at: SimTime,
    pub gas: u64,
    pub origin_rsu: RsuId,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Block {
    pub block_id: BlockId,
    pub parent_id: Option<BlockId>,
    pub height: u64,
    pub miner: RsuId,
    pub created_at: SimTime,
    pub transactions: Vec<TxId>,
    pub gas_used: u64,
    pub accepted_by: u32,
    pub discarded_by: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub rsu_id: RsuId,
    pub role: RsuRole,
    /// Zero for regular nodes.
    pub hash_power: f64,
    pub chain: Vec<BlockId>,
    on_chain: Vec<bool>,
    /// Every tx id below this is on the node's chain.
    cursor: usize,
}

impl Node {
    fn new(rsu_id: RsuId, role: RsuRole) -> Self {
        Node { rsu_id, role, hash_power: 0.0, chain: vec![GENESIS], on_chain: Vec::new(), cursor: 0 }
    }

    pub fn tip(&self) -> BlockId {
        *self.chain.last().expect("chain starts at genesis")
    }

    pub fn height(&self) -> u64 {
        (self.chain.len() - 1) as u64
    }

    pub fn holds(&self, tx: TxId) -> bool {
        self.on_chain.get(tx as usize).copied().unwrap_or(false)
    }

    fn mark(&mut self, tx: TxId) {
        let i = tx as usize;
        if i >= self.on_chain.len() {
            self.on_chain.resize(i + 1, false);
        }
        self.on_chain[i] = true;
        while self.cursor < self.on_chain.len() && self.on_chain[self.cursor] {
            self.cursor += 1;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Validation {
    Accepted,
    Discarded,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RaceResult {
    /// Index into the share vector.
    pub winner: usize,
    pub block_time: f64,
}

/// Weights from `Normal(mean, sd)`, redrawing non-positive values.
pub fn assign_hash_power<R: Rng + ?Sized>(n_miners: usize, mean: f64, sd: f64, rng: &mut R) -> Vec<f64> {
    let normal = Normal::new(mean, sd.max(0.0)).expect("finite parameters");
    (0..n_miners)
        .map(|_| loop {
            let h = normal.sample(rng);
            if h > 0.0 {
                break h;
            }
        })
        .collect()
}

/// `R_n = H_n / Σ H`.
pub fn shares(weights: &[f64]) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    weights.iter().map(|w| w / total).collect()
}

/// Exponential with rate `share / T_G`.
pub fn sample_block_time<R: Rng + ?Sized>(share: f64, block_interval_s: f64, rng: &mut R) -> Result<f64, BlockchainError> {
    if !(block_interval_s > 0.0) {
        return Err(BlockchainError::NonPositive { name: "block_interval_s", value: block_interval_s });
    }
    sample_exponential(share / block_interval_s, rng).map_err(|_| BlockchainError::NonPositive { name: "hash share", value: share })
}

/// Every miner draws a block time; the minimum wins. Ties go to the lower
/// index.
pub fn run_consensus_round<R: Rng + ?Sized>(shares: &[f64], block_interval_s: f64, rng: &mut R) -> Result<RaceResult, BlockchainError> {
    if shares.is_empty() {
        return Err(BlockchainError::NoMiners);
    }
    let mut best = RaceResult { winner: 0, block_time: f64::INFINITY };
    for (i, &s) in shares.iter().enumerate() {
        let t = sample_block_time(s, block_interval_s, rng)?;
        if t < best.block_time {
            best = RaceResult { winner: i, block_time: t };
        }
    }
    Ok(best)
}

/// One `Exp(1/T_R)` delay for every node except `sender`.
pub fn broadcast_delays<R: Rng + ?Sized>(n_nodes: usize, sender: usize, receive_time_s: f64, rng: &mut R) -> Result<Vec<(usize, f64)>, BlockchainError> {
    if !(receive_time_s > 0.0) {
        return Err(BlockchainError::NonPositive { name: "receive_time_s", value: receive_time_s });
    }
    (0..n_nodes)
        .filter(|&n| n != sender)
        .map(|n| {
            sample_exponential(1.0 / receive_time_s, rng)
                .map(|d| (n, d))
                .map_err(|_| BlockchainError::NonPositive { name: "receive_time_s", value: receive_time_s })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalChain {
    /// A node holding the chain.
    pub node: usize,
    pub tip: BlockId,
    pub blocks: Vec<BlockId>,
    /// Sorted, unique.
    pub tx_ids: Vec<TxId>,
}

impl CanonicalChain {
    pub fn tx_count(&self) -> usize {
        self.tx_ids.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSummary {
    pub block_id: BlockId,
    pub parent_id: Option<BlockId>,
    pub height: u64,
    pub miner: RsuId,
    pub created_at: f64,
    pub tx_count: usize,
    pub gas_used: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForkReportRow {
    pub time: f64,
    pub miner: RsuId,
    pub block_id: BlockId,
    pub parent_id: Option<BlockId>,
    pub accepted_by: u32,
    pub discarded_by: u32,
}

/// All nodes, blocks and transactions of one run.
#[derive(Debug, Clone)]
pub struct Ledger {
    pub config: BlockchainConfig,
    pub nodes: Vec<Node>,
    pub blocks: Vec<Block>,
    pub txs: Vec<Transaction>,
    /// Node indices of miners, in race order.
    pub miners: Vec<usize>,
}

impl Ledger {
    /// One node per RSU; `hash_powers[i]` goes to the i-th miner in RSU order.
    pub fn new(config: BlockchainConfig, rsus: &[RsuNode], hash_powers: &[f64]) -> Self {
        let mut nodes: Vec<Node> = rsus.iter().map(|r| Node::new(r.rsu_id, r.role)).collect();
        let miners: Vec<usize> = rsus.iter().enumerate().filter(|(_, r)| r.role == RsuRole::Miner).map(|(i, _)| i).collect();
        for (&m, &h) in miners.iter().zip(hash_powers) {
            nodes[m].hash_power = h;
        }
        let genesis = Block {
            block_id: GENESIS,
            parent_id: None,
            height: 0,
            miner: RsuId(u32::MAX),
            created_at: SimTime::ZERO,
            transactions: Vec::new(),
            gas_used: 0,
            accepted_by: nodes.len() as u32,
            discarded_by: 0,
        };
        Ledger { config, nodes, blocks: vec![genesis], txs: Vec::new(), miners }
    }

    pub fn miner_shares(&self) -> Vec<f64> {
        shares(&self.miners.iter().map(|&m| self.nodes[m].hash_power).collect::<Vec<_>>())
    }

    pub fn blocks_mined(&self) -> usize {
        self.blocks.len() - 1
    }

    /// Turns a delivered message into a transaction visible to every pool.
    pub fn verify_and_enqueue(&mut self, msg: &KeyMessage, rsu: RsuId, clock: SimTime) -> Result<TxId, BlockchainError> {
        if !msg.complete {
            return Err(BlockchainError::IncompleteMessage { msg_id: msg.msg_id, vehicle_id: msg.vehicle_id.clone() });
        }
        debug_assert!(clock >= msg.generated_at);
        debug_assert!(self.txs.last().is_none_or(|t| t.created_at <= clock));
        let tx_id = self.txs.len() as TxId;
        self.txs.push(Transaction {
            tx_id,
            msg_id: msg.msg_id,
            vehicle_id: msg.vehicle_id.clone(),
            speed: msg.speed,
            x: msg.x,
            y: msg.y,
            generated_at: msg.generated_at,
            created_at: clock,
            gas: self.config.gas_per_tx,
            origin_rsu: rsu,
        });
        Ok(tx_id)
    }

    /// Pending transactions in `node`'s view, oldest first. Ids are issued
    /// in creation order, so id order is `(created_at, tx_id)` order.
    pub fn pool_view(&self, node: usize) -> impl Iterator<Item = TxId> + '_ {
        let n = &self.nodes[node];
        (n.cursor as TxId..self.txs.len() as TxId).filter(move |&t| !n.holds(t))
    }

    pub fn pool_size(&self, node: usize) -> usize {
        self.pool_view(node).count()
    }

    /// Builds a block on `node`'s tip from its oldest pending transactions,
    /// stopping before the first one that would exceed the gas limit, and
    /// appends it to `node`'s chain.
    pub fn package_block(&mut self, node: usize, clock: SimTime) -> BlockId {
        let mut gas_used = 0u64;
        let mut transactions = Vec::new();
        for t in self.pool_view(node) {
            let g = self.txs[t as usize].gas;
            if gas_used + g > self.config.gas_limit {
                break;
            }
            gas_used += g;
            transactions.push(t);
        }
        let n = &self.nodes[node];
        let parent = n.tip();
        let block_id = self.blocks.len() as BlockId;
        self.blocks.push(Block {
            block_id,
            parent_id: Some(parent),
            height: n.height() + 1,
            miner: n.rsu_id,
            created_at: clock,
            transactions,
            gas_used,
            accepted_by: 0,
            discarded_by: 0,
        });
        self.append(node, block_id);
        block_id
    }

    fn append(&mut self, node: usize, block: BlockId) {
        let Ledger { nodes, blocks, .. } = self;
        let n = &mut nodes[node];
        n.chain.push(block);
        for &t in &blocks[block as usize].transactions {
            n.mark(t);
        }
    }

    /// Accepts iff the block's parent is the node's tip; otherwise the block
    /// is dropped.
    pub fn validate_and_append(&mut self, node: usize, block: BlockId) -> Validation {
        if self.blocks[block as usize].parent_id == Some(self.nodes[node].tip()) {
            self.append(node, block);
            self.blocks[block as usize].accepted_by += 1;
            Validation::Accepted
        } else {
            self.blocks[block as usize].discarded_by += 1;
            Validation::Discarded
        }
    }

    /// Longest local chain; ties go to the earliest tip, then the lowest
    /// miner id.
    pub fn resolve_longest_chain(&self) -> CanonicalChain {
        let best = (0..self.nodes.len())
            .min_by(|&a, &b| {
                let (na, nb) = (&self.nodes[a], &self.nodes[b]);
                let (ta, tb) = (&self.blocks[na.tip() as usize], &self.blocks[nb.tip() as usize]);
                nb.chain
                    .len()
                    .cmp(&na.chain.len())
                    .then(ta.created_at.cmp(&tb.created_at))
                    .then(ta.miner.cmp(&tb.miner))
                    .then(a.cmp(&b))
            })
            .expect("at least one node");
        let node = &self.nodes[best];
        let tx_ids: BTreeSet<TxId> = node.chain.iter().flat_map(|&b| self.blocks[b as usize].transactions.iter().copied()).collect();
        CanonicalChain { node: best, tip: node.tip(), blocks: node.chain.clone(), tx_ids: tx_ids.into_iter().collect() }
    }

    /// Mined blocks that are not on the canonical chain.
    pub fn blocks_discarded(&self, canonical: &CanonicalChain) -> usize {
        self.blocks_mined() - (canonical.blocks.len() - 1)
    }

    /// Every chain runs from genesis with consecutive heights and matching
    /// parent links, no transaction appears twice on a chain, and no block
    /// exceeds the gas limit.
    pub fn check_integrity(&self) -> Result<(), BlockchainError> {
        for b in &self.blocks {
            if b.gas_used > self.config.gas_limit || b.gas_used != b.transactions.iter().map(|&t| self.txs[t as usize].gas).sum::<u64>() {
                return Err(BlockchainError::Integrity { node: usize::MAX, position: b.height as usize, reason: format!("block {} gas accounting", b.block_id) });
            }
        }
        for (ni, n) in self.nodes.iter().enumerate() {
            let fail = |position: usize, reason: String| Err(BlockchainError::Integrity { node: ni, position, reason });
            if n.chain.first() != Some(&GENESIS) {
                return fail(0, "chain does not start at genesis".into());
            }
            let mut seen = BTreeSet::new();
            for (pos, w) in n.chain.windows(2).enumerate() {
                let (prev, cur) = (&self.blocks[w[0] as usize], &self.blocks[w[1] as usize]);
                if cur.parent_id != Some(prev.block_id) {
                    return fail(pos + 1, format!("block {} does not link to {}", cur.block_id, prev.block_id));
                }
                if cur.height != prev.height + 1 {
                    return fail(pos + 1, format!("height {} after {}", cur.height, prev.height));
                }
                for &t in &cur.transactions {
                    if !seen.insert(t) {
                        return fail(pos + 1, format!("transaction {t} appears twice"));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn chain_dump(&self) -> Vec<BlockSummary> {
        self.blocks
            .iter()
            .map(|b| BlockSummary {
                block_id: b.block_id,
                parent_id: b.parent_id,
                height: b.height,
                miner: b.miner,
                created_at: b.created_at.as_secs_f64(),
                tx_count: b.transactions.len(),
                gas_used: b.gas_used,
            })
            .collect()
    }

    pub fn write_chain_dump<W: Write>(&self, out: W) -> serde_json::Result<()> {
        serde_json::to_writer_pretty(out, &self.chain_dump())
    }

    pub fn fork_report(&self) -> Vec<ForkReportRow> {
        self.blocks
            .iter()
            .skip(1)
            .map(|b| ForkReportRow {
                time: b.created_at.as_secs_f64(),
                miner: b.miner,
                block_id: b.block_id,
                parent_id: b.parent_id,
                accepted_by: b.accepted_by,
                discarded_by: b.discarded_by,
            })
            .collect()
    }

    pub fn write_fork_report<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in self.fork_report() {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{RngStreams, StreamId};

    fn rsus(n: usize, miners: usize) -> Vec<RsuNode> {
        (0..n)
            .map(|i| RsuNode {
                rsu_id: RsuId(i as u32),
                x: 0.0,
                y: 0.0,
                coverage_radius: 500.0,
                role: if i < miners { RsuRole::Miner } else { RsuRole::Regular },
                zone: 0,
            })
            .collect()
    }

    fn ledger(n: usize, miners: usize) -> Ledger {
        Ledger::new(BlockchainConfig::default(), &rsus(n, miners), &vec![1.0; miners])
    }

    fn msg(i: u64, t: f64) -> KeyMessage {
        KeyMessage { msg_id: i, vehicle_id: format!("veh{i}"), speed: 10.0, x: 1.0, y: 2.0, generated_at: SimTime::from_secs_f64(t), complete: true }
    }

    fn fill(l: &mut Ledger, n: u64, t: f64) {
        for i in 0..n {
            l.verify_and_enqueue(&msg(i, t), RsuId(0), SimTime::from_secs_f64(t)).unwrap();
        }
    }

    #[test]
    fn hash_power_normalizes() {
        let mut rng = RngStreams::new(1).stream(StreamId::HashPower);
        let one = shares(&assign_hash_power(1, 100.0, 20.0, &mut rng));
        assert_eq!(one, vec![1.0]);
        let w = assign_hash_power(30, 100.0, 20.0, &mut rng);
        assert!(w.iter().all(|&h| h > 0.0));
        let s: f64 = shares(&w).iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        let many = assign_hash_power(20_000, 100.0, 20.0, &mut rng);
        let mean = many.iter().sum::<f64>() / many.len() as f64;
        assert!((mean / 100.0 - 1.0).abs() < 0.02);
    }

    #[test]
    fn block_time_means() {
        let mut rng = RngStreams::new(2).stream(StreamId::BlockTimes);
        let n = 100_000;
        let m1 = (0..n).map(|_| sample_block_time(1.0, 2.7, &mut rng).unwrap()).sum::<f64>() / n as f64;
        assert!((m1 / 2.7 - 1.0).abs() < 0.02, "{m1}");
        let m2 = (0..n).map(|_| sample_block_time(0.5, 2.7, &mut rng).unwrap()).sum::<f64>() / n as f64;
        assert!((m2 / 5.4 - 1.0).abs() < 0.02, "{m2}");
        assert!(sample_block_time(1.0, 0.0, &mut rng).is_err());
    }

    #[test]
    fn race_winner_frequencies() {
        let mut rng = RngStreams::new(3).stream(StreamId::BlockTimes);
        let s = [0.5, 0.3, 0.2];
        let mut wins = [0u32; 3];
        for _ in 0..10_000 {
            wins[run_consensus_round(&s, 2.7, &mut rng).unwrap().winner] += 1;
        }
        for (w, share) in wins.iter().zip(s) {
            assert!((*w as f64 / 1e4 - share).abs() < 0.02, "{wins:?}");
        }
        let solo = run_consensus_round(&[1.0], 2.7, &mut rng).unwrap();
        assert_eq!(solo.winner, 0);
        let mut even = [0u32; 2];
        for _ in 0..10_000 {
            even[run_consensus_round(&[0.5, 0.5], 2.7, &mut rng).unwrap().winner] += 1;
        }
        assert!((even[0] as f64 / 1e4 - 0.5).abs() < 0.02);
        assert!(matches!(run_consensus_round(&[], 2.7, &mut rng), Err(BlockchainError::NoMiners)));
    }

    #[test]
    fn broadcast_examples() {
        let streams = RngStreams::new(4);
        let d = broadcast_delays(54, 3, 0.25, &mut streams.stream(StreamId::BroadcastTimes)).unwrap();
        assert_eq!(d.len(), 53);
        assert!(d.iter().all(|&(n, t)| n != 3 && t > 0.0));
        let again = broadcast_delays(54, 3, 0.25, &mut streams.stream(StreamId::BroadcastTimes)).unwrap();
        assert_eq!(d, again);
        assert!(broadcast_delays(1, 0, 0.25, &mut streams.stream(StreamId::BroadcastTimes)).unwrap().is_empty());
        let mut rng = streams.stream(StreamId::BroadcastTimes);
        let trials = 2000;
        let mean_of_means = (0..trials)
            .map(|_| broadcast_delays(54, 0, 0.25, &mut rng).unwrap().iter().map(|x| x.1).sum::<f64>() / 53.0)
            .sum::<f64>()
            / trials as f64;
        assert!((mean_of_means - 0.25).abs() < 0.005, "{mean_of_means}");
    }

    #[test]
    fn packaging_examples() {
        let mut l = ledger(3, 1);
        fill(&mut l, 3, 1.0);
        let b = l.package_block(0, SimTime::from_secs_f64(2.0));
        assert_eq!(l.blocks[b as usize].transactions, vec![0, 1, 2]);
        assert_eq!(l.blocks[b as usize].gas_used, 63_000);
        assert_eq!(l.pool_size(0), 0);
        assert_eq!(l.pool_size(1), 3);

        let mut l = ledger(3, 1);
        fill(&mut l, 2000, 1.0);
        let b = l.package_block(0, SimTime::from_secs_f64(2.0));
        assert_eq!(l.blocks[b as usize].transactions.len(), 1428);
        assert_eq!(l.blocks[b as usize].transactions[0], 0);
        assert_eq!(l.blocks[b as usize].transactions[1427], 1427);
        assert!(l.blocks[b as usize].gas_used <= 30_000_000);
        assert_eq!(l.pool_size(0), 572);

        let mut l = ledger(3, 1);
        let b = l.package_block(0, SimTime::from_secs_f64(2.0));
        assert!(l.blocks[b as usize].transactions.is_empty());
        assert_eq!(l.blocks[b as usize].gas_used, 0);
    }

    #[test]
    fn validation_examples() {
        let mut l = ledger(3, 2);
        fill(&mut l, 5, 0.5);
        let a = l.package_block(0, SimTime::from_secs_f64(1.0));
        let b = l.package_block(1, SimTime::from_secs_f64(1.1));
        assert_eq!(l.validate_and_append(2, a), Validation::Accepted);
        assert_eq!(l.nodes[2].height(), 1);
        assert_eq!(l.pool_size(2), 0);
        // same parent, arrives second
        assert_eq!(l.validate_and_append(2, b), Validation::Discarded);
        // duplicate delivery
        assert_eq!(l.validate_and_append(2, a), Validation::Discarded);
        assert_eq!(l.blocks[a as usize].accepted_by, 1);
        assert_eq!(l.blocks[b as usize].discarded_by, 1);
        l.check_integrity().unwrap();
    }

    #[test]
    fn longest_chain_and_ties() {
        let mut l = ledger(2, 2);
        fill(&mut l, 10, 0.1);
        // branch A on node 0: heights 1..=5; branch B on node 1: 1..=4
        for k in 0..5 {
            l.package_block(0, SimTime::from_secs_f64(1.0 + k as f64));
            fill(&mut l, 2, 1.5 + k as f64);
        }
        for k in 0..4 {
            l.package_block(1, SimTime::from_secs_f64(1.2 + k as f64));
        }
        let c = l.resolve_longest_chain();
        assert_eq!(c.node, 0);
        assert_eq!(c.blocks.len(), 6);
        for t in &c.tx_ids {
            assert!(l.nodes[0].holds(*t));
        }
        assert_eq!(l.blocks_discarded(&c), 4);
        l.check_integrity().unwrap();

        // two height-5 chains: the older tip wins
        l.package_block(1, SimTime::from_secs_f64(3.0));
        let c = l.resolve_longest_chain();
        assert_eq!(c.node, 1);
    }

    #[test]
    fn identical_chains_count_everything() {
        let mut l = ledger(3, 1);
        fill(&mut l, 7, 0.2);
        let b = l.package_block(0, SimTime::from_secs_f64(1.0));
        l.validate_and_append(1, b);
        l.validate_and_append(2, b);
        let c = l.resolve_longest_chain();
        assert_eq!(c.tx_count(), 7);
        assert_eq!(l.blocks_discarded(&c), 0);
    }

    #[test]
    fn verify_and_enqueue_examples() {
        let mut l = ledger(2, 1);
        let id = l.verify_and_enqueue(&msg(1, 1.0), RsuId(1), SimTime::from_secs_f64(1.2)).unwrap();
        assert_eq!(l.txs[id as usize].created_at, SimTime::from_secs_f64(1.2));
        assert_eq!(l.txs[id as usize].origin_rsu, RsuId(1));
        let mut bad = msg(2, 1.3);
        bad.complete = false;
        assert!(matches!(l.verify_and_enqueue(&bad, RsuId(0), SimTime::from_secs_f64(1.4)), Err(BlockchainError::IncompleteMessage { .. })));
        assert_eq!(l.txs.len(), 1);
        let mut second = msg(1, 1.5);
        second.msg_id = 99;
        let id2 = l.verify_and_enqueue(&second, RsuId(1), SimTime::from_secs_f64(1.6)).unwrap();
        assert_ne!(id, id2);
        assert_eq!(l.pool_size(0), 2);
    }

    #[test]
    fn integrity_catches_broken_links() {
        let mut l = ledger(2, 1);
        fill(&mut l, 2, 0.1);
        l.package_block(0, SimTime::from_secs_f64(1.0));
        l.nodes[1].chain.push(1);
        l.nodes[1].chain.push(1);
        assert!(matches!(l.check_integrity(), Err(BlockchainError::Integrity { node: 1, .. })));
    }

    #[test]
    fn fork_report_and_dump() {
        let mut l = ledger(3, 2);
        fill(&mut l, 4, 0.1);
        let a = l.package_block(0, SimTime::from_secs_f64(1.0));
        let b = l.package_block(1, SimTime::from_secs_f64(1.0));
        l.validate_and_append(2, a);
        l.validate_and_append(2, b);
        let rows = l.fork_report();
        assert_eq!(rows.len(), 2);
        assert_eq!((rows[0].accepted_by, rows[0].discarded_by), (1, 0));
        assert_eq!((rows[1].accepted_by, rows[1].discarded_by), (0, 1));
        let mut buf = Vec::new();
        l.write_fork_report(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("time,miner,block_id,parent_id,accepted_by,discarded_by\n"));
        let mut js = Vec::new();
        l.write_chain_dump(&mut js).unwrap();
        let back: Vec<BlockSummary> = serde_json::from_slice(&js).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back[1].tx_count, 4);
        assert_eq!(back[2].parent_id, Some(GENESIS));
    }
}
