//! One scenario run: builds every layer from a [`ScenarioConfig`], drives
//! the engine to the end of simulated time and reduces the result to
//! [`RunMetrics`].
//!
//! Attempt rounds happen every `round_interval_ms`. Each vehicle owns one
//! phase slot per message period and generates its key message there; a
//! message that fails is retried in the following rounds until it arrives or
//! the retry budget runs out. A message still pending when its vehicle's
//! next message is due is counted lost.

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::blockchain::{
    assign_hash_power, broadcast_delays, run_consensus_round, BlockchainConfig, BlockchainError, CanonicalChain, KeyMessage,
    Ledger, Validation,
};
use crate::config::{ConfigError, SatelliteSource, ScenarioConfig, TraceSource};
use crate::connectivity::{
    cell_key, run_attempt_round, AttemptContext, ChannelSnapshot, ConnectivityError, Csi, LinkAction, Medium, Mode, OccupancyRow,
    PlannedAttempt, Presence, RadioGeometry, Strategy,
};
use crate::engine::{EventHandler, EventKind, EventLog, RngStreams, Scheduler, SimEvent, SimTime, StreamId, StreamRng};
use crate::metrics::{message_throughput, transaction_throughput, LossBreakdown, MetricsError, ModeStats, RunMetrics};
use crate::mobility::{generate_synthetic, parse_csv_trace, parse_fcd_trace, place_rsus, MobilityError, MobilityTrace, RsuId, RsuNode};
use crate::satellite::{parse_tle_file, GroundFrame, SkySnapshot, TleError, TleRecord};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("trace {path}: {source}")]
    Trace { path: PathBuf, source: MobilityError },
    #[error(transparent)]
    Mobility(#[from] MobilityError),
    #[error("TLE {path}: {source}")]
    Tle { path: PathBuf, source: TleError },
    #[error(transparent)]
    Connectivity(#[from] ConnectivityError),
    #[error(transparent)]
    Blockchain(#[from] BlockchainError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}: {msg}")]
    Io { path: PathBuf, msg: String },
}

/// Event payloads. Handlers fill in the `Option` fields, so the log shows
/// what actually happened.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum EventPayload {
    Round {
        slot: u64,
        attempts: u32,
        successes: u32,
    },
    Arrival {
        msg_id: u64,
        vehicle: u32,
        rsu: u32,
        mode: Mode,
        generated_us: u64,
        /// Generation to arrival, including failed attempts before this one.
        latency_us: u64,
        x: f64,
        y: f64,
        speed: f64,
        tx_id: Option<u64>,
    },
    BlockWon {
        /// Node index (equal to the RSU id).
        miner: u32,
        block_id: Option<u64>,
        parent_id: Option<u64>,
        height: u64,
        tx_count: u64,
    },
    BlockReceived {
        node: u32,
        block_id: u64,
        accepted: Option<bool>,
    },
    Tick {
        generated: u64,
        delivered: u64,
        lost: u64,
        blocks_mined: u64,
        transactions: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    pub record_log: bool,
    pub record_occupancy: bool,
    /// Runs the full chain-integrity check after every event.
    pub check_integrity: bool,
}

pub struct RunOutput {
    pub metrics: RunMetrics,
    pub log: EventLog<EventPayload>,
    pub ledger: Ledger,
    pub canonical: CanonicalChain,
    pub occupancy: Vec<OccupancyRow>,
    pub rsus: Vec<RsuNode>,
}

/// Loads or generates the mobility trace a scenario asks for.
pub fn load_trace(cfg: &ScenarioConfig, streams: &RngStreams) -> Result<MobilityTrace, SimError> {
    let t = &cfg.traffic;
    let open = |p: &Path| {
        std::fs::File::open(p).map(BufReader::new).map_err(|e| SimError::Io { path: p.to_owned(), msg: e.to_string() })
    };
    match t.source {
        TraceSource::Synthetic => {
            Ok(generate_synthetic(&cfg.region, t.n_vehicles, cfg.sim_time_s, &mut streams.stream(StreamId::Mobility)))
        }
        TraceSource::Fcd | TraceSource::Csv => {
            let path = t.path.clone().unwrap_or_default();
            let input = open(&path)?;
            let parsed = if t.source == TraceSource::Fcd { parse_fcd_trace(input) } else { parse_csv_trace(input) };
            parsed.map_err(|source| SimError::Trace { path, source })
        }
    }
}

pub fn load_satellites(cfg: &ScenarioConfig) -> Result<Vec<TleRecord>, SimError> {
    let s = &cfg.satellite;
    match s.source {
        SatelliteSource::Disabled => Ok(Vec::new()),
        SatelliteSource::Parametric => Ok(s.constellation.records()),
        SatelliteSource::Tle => {
            let path = s.tle_path.clone().unwrap_or_default();
            let text = std::fs::read_to_string(&path).map_err(|e| SimError::Io { path: path.clone(), msg: e.to_string() })?;
            parse_tle_file(&text).map_err(|source| SimError::Tle { path, source })
        }
    }
}

/// Block race, packaging, broadcast and validation on the shared clock.
pub struct Consensus {
    pub ledger: Ledger,
    shares: Vec<f64>,
    race_rng: StreamRng,
    streams: RngStreams,
}

impl Consensus {
    pub fn new(config: BlockchainConfig, rsus: &[RsuNode], streams: RngStreams) -> Result<Self, SimError> {
        let n_miners = rsus.iter().filter(|r| r.role == crate::mobility::RsuRole::Miner).count();
        if n_miners == 0 {
            return Err(BlockchainError::NoMiners.into());
        }
        let hp = assign_hash_power(n_miners, config.hash_power_mean, config.hash_power_sd, &mut streams.stream(StreamId::HashPower));
        let ledger = Ledger::new(config, rsus, &hp);
        let shares = ledger.miner_shares();
        Ok(Consensus { ledger, shares, race_rng: streams.stream(StreamId::BlockTimes), streams })
    }

    /// Draws the next race and schedules its winner.
    pub fn schedule_race(&mut self, sched: &mut Scheduler<EventPayload>) -> Result<(), BlockchainError> {
        let race = run_consensus_round(&self.shares, self.ledger.config.block_interval_s, &mut self.race_rng)?;
        let miner = self.ledger.miners[race.winner] as u32;
        sched.schedule_in(
            SimTime::span_ceil(race.block_time),
            EventKind::BlockWon,
            EventPayload::BlockWon { miner, block_id: None, parent_id: None, height: 0, tx_count: 0 },
        );
        Ok(())
    }

    fn on_event(&mut self, payload: &mut EventPayload, sched: &mut Scheduler<EventPayload>) -> Result<(), BlockchainError> {
        match payload {
            EventPayload::BlockWon { miner, block_id, parent_id, height, tx_count } => {
                let node = *miner as usize;
                let id = self.ledger.package_block(node, sched.now());
                let b = &self.ledger.blocks[id as usize];
                *block_id = Some(id);
                *parent_id = b.parent_id;
                *height = b.height;
                *tx_count = b.transactions.len() as u64;
                let delays = broadcast_delays(
                    self.ledger.nodes.len(),
                    node,
                    self.ledger.config.receive_time_s,
                    &mut self.streams.keyed(StreamId::BroadcastTimes, id),
                )?;
                for (n, d) in delays {
                    sched.schedule_in(
                        SimTime::span_ceil(d),
                        EventKind::BlockReceived,
                        EventPayload::BlockReceived { node: n as u32, block_id: id, accepted: None },
                    );
                }
                self.schedule_race(sched)
            }
            EventPayload::BlockReceived { node, block_id, accepted } => {
                let v = self.ledger.validate_and_append(*node as usize, *block_id);
                *accepted = Some(v == Validation::Accepted);
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

struct Pending {
    msg_id: u64,
    generated: SimTime,
    x: f64,
    y: f64,
    speed: f64,
    attempts: u32,
    previous: Option<LinkAction>,
}

#[derive(Default)]
struct ModeCounters {
    attempts: u64,
    failures: u64,
    delivered: u64,
    latency_us: u64,
}

#[derive(Default)]
struct Counters {
    generated: u64,
    delivered: u64,
    latency_us: u64,
    per_mode: BTreeMap<Mode, ModeCounters>,
    losses: LossBreakdown,
}

struct World<'a> {
    cfg: &'a ScenarioConfig,
    opts: RunOptions,
    streams: RngStreams,
    trace: &'a MobilityTrace,
    geometry: RadioGeometry<'a>,
    medium: Medium<'a>,
    satellites: &'a [TleRecord],
    sky: Option<SkySnapshot>,
    sky_anchor: crate::satellite::Vec3,
    strategy: Box<dyn Strategy>,
    round_us: u64,
    shadow_epoch_us: u64,
    slots_per_period: u64,
    by_phase: Vec<Vec<u32>>,
    pending: Vec<Option<Pending>>,
    active: BTreeSet<u32>,
    snapshot: ChannelSnapshot,
    next_msg: u64,
    counters: Counters,
    consensus: Consensus,
    occupancy: Vec<OccupancyRow>,
    error: Option<SimError>,
}

impl World<'_> {
    fn lose(&mut self, vehicle: u32, bucket: fn(&mut LossBreakdown) -> &mut u64) {
        self.pending[vehicle as usize] = None;
        self.active.remove(&vehicle);
        *bucket(&mut self.counters.losses) += 1;
    }

    fn refresh_sky(&mut self, t: f64) {
        if self.satellites.is_empty() {
            return;
        }
        let s = &self.cfg.satellite;
        let stale = self.sky.as_ref().is_none_or(|sky| t - sky.time >= s.refresh_interval_s - 1e-9);
        if stale {
            let epoch = (t / s.refresh_interval_s).floor() * s.refresh_interval_s;
            self.sky = Some(SkySnapshot::capture(self.satellites, epoch, self.sky_anchor, s.min_elevation_deg, s.candidate_margin_deg));
        }
    }

    fn on_round(&mut self, slot: u64, sched: &mut Scheduler<EventPayload>) -> (u32, u32) {
        let now = sched.now();
        let t = now.as_secs_f64();
        let next = SimTime(now.0 + self.round_us);
        if next.as_secs_f64() <= self.cfg.sim_time_s + 1e-9 {
            sched.schedule_in(SimTime(self.round_us), EventKind::MessageAttempt, EventPayload::Round { slot: slot + 1, attempts: 0, successes: 0 });
        }

        let phase = (slot % self.slots_per_period) as usize;
        for i in 0..self.by_phase[phase].len() {
            let v = self.by_phase[phase][i];
            if self.pending[v as usize].is_some() {
                self.lose(v, |l| &mut l.expired);
            }
            if let Some(st) = self.trace.vehicles[v as usize].state_at(t) {
                self.pending[v as usize] = Some(Pending {
                    msg_id: self.next_msg,
                    generated: now,
                    x: st.x,
                    y: st.y,
                    speed: st.speed,
                    attempts: 0,
                    previous: None,
                });
                self.next_msg += 1;
                self.counters.generated += 1;
                self.active.insert(v);
            }
        }

        if self.active.is_empty() {
            self.snapshot = ChannelSnapshot { round: Some(slot), transmissions: Vec::new() };
            return (0, 0);
        }

        let present: Vec<Presence> = self
            .trace
            .vehicles
            .iter()
            .enumerate()
            .filter_map(|(i, tr)| tr.position_at(t).map(|(x, y)| self.geometry.presence(i as u32, x, y)))
            .collect();
        self.refresh_sky(t);

        let mut plans = Vec::new();
        let active: Vec<u32> = self.active.iter().copied().collect();
        for v in active {
            let Ok(pi) = present.binary_search_by_key(&v, |p| p.vehicle) else {
                self.lose(v, |l| &mut l.departed);
                continue;
            };
            let env = self.geometry.build_env(&self.medium, &present[pi], &present, self.sky.as_ref(), &self.snapshot);
            let pending = self.pending[v as usize].as_ref().expect("active vehicles have a message");
            let candidates = match self.medium.candidates(&env, pending.attempts, &self.snapshot) {
                Ok(c) => c,
                Err(_) => {
                    self.lose(v, |l| &mut l.no_feasible_action);
                    continue;
                }
            };
            let ctx = AttemptContext {
                round: slot,
                vehicle_id: &self.trace.vehicles[v as usize].id,
                attempt: pending.attempts,
                previous: pending.previous,
            };
            let mut rng = self.streams.keyed(StreamId::Strategy, cell_key(slot, v, 0));
            let idx = self.strategy.select(&ctx, &candidates, &mut rng);
            let c = candidates[idx];
            plans.push(PlannedAttempt { env, action: c.action, estimate: c.estimate });
        }

        let epoch = slot * self.round_us / self.shadow_epoch_us;
        let round = run_attempt_round(&self.medium, &plans, slot, epoch, &self.streams);
        let mut successes = 0;
        for r in &round.results {
            let v = r.vehicle;
            if self.opts.record_occupancy {
                self.occupancy.push(OccupancyRow::from_result(slot, &self.trace.vehicles[v as usize].id, r));
            }
            let stats = self.counters.per_mode.entry(r.action.mode).or_default();
            stats.attempts += 1;
            match (r.arrival_time(now), r.destination) {
                (Some(at), Some(rsu)) => {
                    successes += 1;
                    let p = self.pending[v as usize].take().expect("pending message");
                    self.active.remove(&v);
                    sched.schedule_in(
                        at - now,
                        EventKind::MessageArrival,
                        EventPayload::Arrival {
                            msg_id: p.msg_id,
                            vehicle: v,
                            rsu,
                            mode: r.action.mode,
                            generated_us: p.generated.0,
                            latency_us: (at - p.generated).0,
                            x: p.x,
                            y: p.y,
                            speed: p.speed,
                            tx_id: None,
                        },
                    );
                }
                _ => {
                    stats.failures += 1;
                    let budget = self.cfg.connectivity.retry_budget;
                    let p = self.pending[v as usize].as_mut().expect("pending message");
                    p.attempts += 1;
                    p.previous = Some(r.action);
                    if p.attempts >= budget {
                        self.lose(v, |l| &mut l.retry_exhausted);
                    }
                }
            }
        }
        self.snapshot = round.snapshot;
        (plans.len() as u32, successes)
    }

    fn on_arrival(&mut self, payload: &mut EventPayload, now: SimTime) -> Result<(), SimError> {
        let EventPayload::Arrival { msg_id, vehicle, rsu, mode, generated_us, latency_us, x, y, speed, tx_id } = payload else {
            return Ok(());
        };
        let msg = KeyMessage {
            msg_id: *msg_id,
            vehicle_id: self.trace.vehicles[*vehicle as usize].id.clone(),
            speed: *speed,
            x: *x,
            y: *y,
            generated_at: SimTime(*generated_us),
            complete: true,
        };
        let id = self.consensus.ledger.verify_and_enqueue(&msg, RsuId(*rsu), now)?;
        *tx_id = Some(id);
        self.counters.delivered += 1;
        self.counters.latency_us += *latency_us;
        let stats = self.counters.per_mode.entry(*mode).or_default();
        stats.delivered += 1;
        stats.latency_us += *latency_us;
        Ok(())
    }

    fn lost(&self) -> u64 {
        self.counters.losses.total()
    }
}

impl EventHandler<EventPayload> for World<'_> {
    fn handle(&mut self, event: &mut SimEvent<EventPayload>, sched: &mut Scheduler<EventPayload>) {
        if self.error.is_some() {
            return;
        }
        let result: Result<(), SimError> = match &mut event.payload {
            EventPayload::Round { slot, attempts, successes } => {
                let (a, s) = self.on_round(*slot, sched);
                *attempts = a;
                *successes = s;
                Ok(())
            }
            p @ EventPayload::Arrival { .. } => self.on_arrival(p, event.time),
            p @ (EventPayload::BlockWon { .. } | EventPayload::BlockReceived { .. }) => {
                self.consensus.on_event(p, sched).map_err(SimError::from)
            }
            EventPayload::Tick { generated, delivered, lost, blocks_mined, transactions } => {
                *generated = self.counters.generated;
                *delivered = self.counters.delivered;
                *lost = self.lost();
                *blocks_mined = self.consensus.ledger.blocks_mined() as u64;
                *transactions = self.consensus.ledger.txs.len() as u64;
                if event.time.as_secs_f64() + 1.0 <= self.cfg.sim_time_s + 1e-9 {
                    sched.schedule_in(SimTime::from_secs_f64(1.0), EventKind::MetricTick, tick());
                }
                Ok(())
            }
        };
        let result = result.and_then(|_| {
            if self.opts.check_integrity {
                self.consensus.ledger.check_integrity()?;
            }
            Ok(())
        });
        if let Err(e) = result {
            self.error = Some(e);
        }
    }
}

fn tick() -> EventPayload {
    EventPayload::Tick { generated: 0, delivered: 0, lost: 0, blocks_mined: 0, transactions: 0 }
}

/// Runs one scenario to completion.
pub fn run(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<RunOutput, SimError> {
    let strategy_kind = cfg.strategy().map_err(|e| ConfigError::Validation(vec![e]))?;
    let strategy = strategy_kind.build()?;
    let streams = RngStreams::new(cfg.seed);
    let trace = load_trace(cfg, &streams)?;
    let satellites = load_satellites(cfg)?;
    let rsus = place_rsus(&cfg.region, cfg.blockchain.n_miners)?;
    let frame = GroundFrame {
        anchor_lat_deg: cfg.region.anchor_lat_deg,
        anchor_lon_deg: cfg.region.anchor_lon_deg,
        center_x: cfg.region.width_m / 2.0,
        center_y: cfg.region.height_m / 2.0,
    };
    let geometry = RadioGeometry {
        channel: &cfg.channel,
        rsus: &rsus,
        frame,
        v2v_range_m: cfg.connectivity.v2v_range_m,
        min_elevation_deg: cfg.satellite.min_elevation_deg,
    };

    let round_us = SimTime::from_secs_f64(cfg.connectivity.round_interval_ms * 1e-3).0.max(1);
    let period_us = SimTime::from_secs_f64(cfg.message_period_s).0;
    let slots_per_period = (period_us / round_us).max(1);
    let mut by_phase = vec![Vec::new(); slots_per_period as usize];
    let mut phase_rng = streams.stream(StreamId::Phases);
    for v in 0..trace.vehicles.len() {
        by_phase[phase_rng.random_range(0..slots_per_period) as usize].push(v as u32);
    }

    let consensus = Consensus::new(cfg.blockchain.clone(), &rsus, streams)?;
    let shadow_epoch_us = SimTime::from_secs_f64(cfg.connectivity.shadowing_coherence_s).0.max(1);
    let n = trace.vehicles.len();
    let mut world = World {
        cfg,
        opts: *opts,
        streams,
        trace: &trace,
        geometry,
        medium: {
            let m = Medium::new(&cfg.channel, &cfg.connectivity);
            if cfg.connectivity.csi_estimates { m.with_csi(Csi { streams, round_us, epoch_us: shadow_epoch_us }) } else { m }
        },
        satellites: &satellites,
        sky: None,
        sky_anchor: frame.to_ecef(frame.center_x, frame.center_y, 0.0),
        strategy,
        round_us,
        shadow_epoch_us,
        slots_per_period,
        by_phase,
        pending: (0..n).map(|_| None).collect(),
        active: BTreeSet::new(),
        snapshot: ChannelSnapshot::idle(),
        next_msg: 0,
        counters: Counters::default(),
        consensus,
        occupancy: Vec::new(),
        error: None,
    };

    let mut sched = Scheduler::new();
    sched.set_logging(opts.record_log);
    sched.schedule(SimTime::ZERO, EventKind::MessageAttempt, EventPayload::Round { slot: 0, attempts: 0, successes: 0 })
        .expect("clock starts at zero");
    sched.schedule(SimTime::from_secs_f64(1.0), EventKind::MetricTick, tick()).expect("clock starts at zero");
    world.consensus.schedule_race(&mut sched)?;
    let log = sched.run_until(SimTime::from_secs_f64(cfg.sim_time_s), &mut world);
    if let Some(e) = world.error.take() {
        return Err(e);
    }

    let ledger = world.consensus.ledger;
    let canonical = ledger.resolve_longest_chain();
    let c = &world.counters;
    let sum_latency_ms = c.latency_us as f64 / 1000.0;
    let canonical_tx = canonical.tx_count() as u64;
    let blocks_mined = ledger.blocks_mined() as u64;
    let metrics = RunMetrics {
        scenario: cfg.scenario.clone(),
        strategy: strategy_kind.to_string(),
        seed: cfg.seed,
        n_vehicles: trace.vehicle_count(),
        block_interval_s: cfg.blockchain.block_interval_s,
        msgs_generated: c.generated,
        msgs_delivered: c.delivered,
        msgs_lost: c.losses.total(),
        sum_latency_ms,
        message_throughput_m_per_ms: message_throughput(c.delivered, sum_latency_ms)?,
        canonical_tx,
        tx_throughput_per_s: transaction_throughput(canonical_tx, cfg.sim_time_s),
        blocks_mined,
        blocks_discarded: ledger.blocks_discarded(&canonical) as u64,
        per_mode: c
            .per_mode
            .iter()
            .map(|(m, s)| {
                let stats = ModeStats {
                    attempts: s.attempts,
                    failures: s.failures,
                    delivered: s.delivered,
                    sum_latency_ms: s.latency_us as f64 / 1000.0,
                };
                (m.as_str().to_string(), stats)
            })
            .collect(),
        losses: c.losses.clone(),
    };
    Ok(RunOutput { metrics, log, ledger, canonical, occupancy: world.occupancy, rsus })
}

/// Result of a consensus-only run.
pub struct ChainRun {
    pub ledger: Ledger,
    pub canonical: CanonicalChain,
    pub log: EventLog<EventPayload>,
    pub tx_throughput_per_s: f64,
}

struct ChainWorld {
    consensus: Consensus,
    check_integrity: bool,
    error: Option<SimError>,
}

impl EventHandler<EventPayload> for ChainWorld {
    fn handle(&mut self, event: &mut SimEvent<EventPayload>, sched: &mut Scheduler<EventPayload>) {
        if self.error.is_some() {
            return;
        }
        let mut r = self.consensus.on_event(&mut event.payload, sched);
        if r.is_ok() && self.check_integrity {
            r = self.consensus.ledger.check_integrity();
        }
        if let Err(e) = r {
            self.error = Some(e.into());
        }
    }
}

/// Runs only the consensus layer over `rsus` with `preload` transactions
/// already in every pool at time zero.
pub fn run_chain_only(
    config: &BlockchainConfig,
    rsus: &[RsuNode],
    preload: u64,
    sim_time_s: f64,
    seed: u64,
    check_integrity: bool,
) -> Result<ChainRun, SimError> {
    let streams = RngStreams::new(seed);
    let mut consensus = Consensus::new(config.clone(), rsus, streams)?;
    for i in 0..preload {
        let msg = KeyMessage {
            msg_id: i,
            vehicle_id: format!("v{i}"),
            speed: 0.0,
            x: 0.0,
            y: 0.0,
            generated_at: SimTime::ZERO,
            complete: true,
        };
        consensus.ledger.verify_and_enqueue(&msg, rsus[0].rsu_id, SimTime::ZERO)?;
    }
    let mut sched = Scheduler::new();
    sched.set_logging(false);
    consensus.schedule_race(&mut sched)?;
    let mut world = ChainWorld { consensus, check_integrity, error: None };
    let log = sched.run_until(SimTime::from_secs_f64(sim_time_s), &mut world);
    if let Some(e) = world.error {
        return Err(e);
    }
    let ledger = world.consensus.ledger;
    let canonical = ledger.resolve_longest_chain();
    let tx_throughput_per_s = transaction_throughput(canonical.tx_count() as u64, sim_time_s);
    Ok(ChainRun { ledger, canonical, log, tx_throughput_per_s })
}
