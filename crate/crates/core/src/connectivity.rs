//! Multi-connectivity management: action spaces, selection strategies and
//! two-phase attempt rounds.
//!
//! An action is `{mode, power, sub-channel}`. Strategies see SINR estimates
//! computed against the previous round's channel occupancy; outcomes are
//! realized afterwards against the transmissions actually made this round.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{
    dbm_to_mw, link_outcome, linear_to_db, noise_power_dbm_with_floor, pathloss_db, rayleigh_power_gain,
    Band, ChannelConfig, LinkGeometry, LinkOutcome, LinkType, SubChannel, Antenna,
};
use crate::engine::{RngStreams, SimTime, StreamId, StreamRng};
use crate::mobility::RsuNode;
use crate::satellite::{distance, GroundFrame, SkySnapshot, Vec3};

#[derive(Debug, Error)]
pub enum ConnectivityError {
    #[error("vehicle {vehicle}: no feasible connection mode")]
    NoFeasibleAction { vehicle: u32 },
    #[error("enhanced case {case}: restricted action set is empty")]
    EmptyRestriction { case: u8 },
    #[error("unknown strategy `{0}` (expected random, max_sinr, enhanced_max_sinr or trace:<path>)")]
    UnknownStrategy(String),
    #[error("action trace {path}: line {line}: {msg}")]
    Trace { path: PathBuf, line: u64, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mode {
    V2I,
    V2V2I,
    V2S2I,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::V2I, Mode::V2V2I, Mode::V2S2I];

    pub fn band(self) -> Band {
        match self {
            Mode::V2S2I => Band::Satellite,
            _ => Band::Terrestrial,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::V2I => "V2I",
            Mode::V2V2I => "V2V2I",
            Mode::V2S2I => "V2S2I",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "V2I" => Ok(Mode::V2I),
            "V2V2I" => Ok(Mode::V2V2I),
            "V2S2I" => Ok(Mode::V2S2I),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Pending,
    Success,
    Failure,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Pending => "pending",
            Outcome::Success => "success",
            Outcome::Failure => "failure",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkAction {
    pub mode: Mode,
    pub tx_power_dbm: f64,
    pub sub_channel: SubChannel,
    pub attempt: u32,
    pub outcome: Outcome,
}

impl LinkAction {
    /// Same `{mode, power, sub-channel}` choice, ignoring attempt bookkeeping.
    pub fn same_choice(&self, other: &LinkAction) -> bool {
        self.mode == other.mode
            && self.tx_power_dbm == other.tx_power_dbm
            && self.sub_channel.band == other.sub_channel.band
            && self.sub_channel.index == other.sub_channel.index
    }
}

/// Selectable transmit powers per hop type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PowerSets {
    pub v2i_dbm: Vec<f64>,
    pub v2v_dbm: Vec<f64>,
    pub v2s_dbm: Vec<f64>,
}

impl Default for PowerSets {
    fn default() -> Self {
        PowerSets { v2i_dbm: vec![23.0], v2v_dbm: vec![23.0, 10.0, 15.0, 17.0], v2s_dbm: vec![33.5] }
    }
}

impl PowerSets {
    pub fn for_mode(&self, mode: Mode) -> &[f64] {
        match mode {
            Mode::V2I => &self.v2i_dbm,
            Mode::V2V2I => &self.v2v_dbm,
            Mode::V2S2I => &self.v2s_dbm,
        }
    }

    /// Descending, so the canonical order prefers higher power among ties.
    fn sorted(&self, mode: Mode) -> Vec<f64> {
        let mut p = self.for_mode(mode).to_vec();
        p.sort_by(|a, b| b.total_cmp(a));
        p.dedup();
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeRef {
    Vehicle(u32),
    Rsu(u32),
    Satellite(u32),
}

/// Radio end point. Terrestrial end points use planar `[x, y, height]`;
/// satellite-band end points use Earth-fixed coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Endpoint {
    pub node: NodeRef,
    pub position: Vec3,
    pub gain_dbi: f64,
    pub noise_figure_db: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelayRoute {
    pub relay: Endpoint,
    pub rsu: Endpoint,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SatelliteRoute {
    /// The vehicle's Ka terminal.
    pub uplink: Endpoint,
    pub satellite: Endpoint,
    pub gateway: Endpoint,
    pub elevation_deg: f64,
}

/// Everything a vehicle can reach in one round.
#[derive(Debug, Clone, PartialEq)]
pub struct VehicleEnv {
    pub vehicle: u32,
    pub endpoint: Endpoint,
    pub rsu: Option<Endpoint>,
    pub relay: Option<RelayRoute>,
    pub satellite: Option<SatelliteRoute>,
}

impl VehicleEnv {
    pub fn feasible(&self, mode: Mode) -> bool {
        match mode {
            Mode::V2I => self.rsu.is_some(),
            Mode::V2V2I => self.relay.is_some(),
            Mode::V2S2I => self.satellite.is_some(),
        }
    }

    /// RSU that receives the message on `mode`.
    pub fn destination(&self, mode: Mode) -> Option<u32> {
        let ep = match mode {
            Mode::V2I => self.rsu,
            Mode::V2V2I => self.relay.map(|r| r.rsu),
            Mode::V2S2I => self.satellite.map(|s| s.gateway),
        }?;
        match ep.node {
            NodeRef::Rsu(id) => Some(id),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Direction {
    Terrestrial,
    Uplink,
    Downlink,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hop {
    pub link_type: LinkType,
    pub direction: Direction,
    pub tx: Endpoint,
    pub rx: Endpoint,
    pub tx_power_dbm: f64,
}

/// One radio emission during a round, as seen by other receivers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Transmission {
    pub owner: u32,
    pub band: Band,
    pub direction: Direction,
    pub channel: u8,
    #[serde(skip)]
    pub position: Vec3,
    pub eirp_dbm: f64,
}

/// Channel occupancy of one round. An empty list is the all-idle snapshot.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ChannelSnapshot {
    pub round: Option<u64>,
    pub transmissions: Vec<Transmission>,
}

impl ChannelSnapshot {
    pub fn idle() -> Self {
        ChannelSnapshot::default()
    }

    pub fn occupancy(&self, band: Band, channel: u8) -> usize {
        self.transmissions.iter().filter(|t| t.band == band && t.channel == channel).count()
    }
}

/// Round-level settings for building environments and transmissions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConnectivityConfig {
    pub strategy: String,
    pub retry_budget: u32,
    /// Spacing of attempt rounds; every vehicle owns one phase slot per
    /// message period.
    pub round_interval_ms: f64,
    pub v2v_range_m: f64,
    /// Lifetime of a link's shadowing and LOS state.
    pub shadowing_coherence_s: f64,
    /// Estimates use each link's per-sub-channel fading from the previous
    /// round instead of unit fading.
    pub csi_estimates: bool,
    /// Power the relay uses on the second hop of a V2V2I path.
    pub relay_forward_power_dbm: f64,
    pub powers: PowerSets,
}

impl Default for ConnectivityConfig {
    fn default() -> Self {
        ConnectivityConfig {
            strategy: "enhanced_max_sinr".into(),
            retry_budget: 5,
            round_interval_ms: 5.0,
            v2v_range_m: 500.0,
            shadowing_coherence_s: 0.5,
            csi_estimates: true,
            relay_forward_power_dbm: 23.0,
            powers: PowerSets::default(),
        }
    }
}

/// Link physics bound to one channel configuration.
#[derive(Debug, Clone, Copy)]
pub struct Medium<'a> {
    pub channel: &'a ChannelConfig,
    pub powers: &'a PowerSets,
    pub relay_forward_power_dbm: f64,
    /// When set, estimates use the gain each link measured on that
    /// sub-channel in the snapshot's round.
    pub csi: Option<Csi>,
}

/// Timing needed to replay a past round's link gains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Csi {
    pub streams: RngStreams,
    pub round_us: u64,
    pub epoch_us: u64,
}

impl Csi {
    pub fn shadow_epoch(&self, round: u64) -> u64 {
        round * self.round_us / self.epoch_us
    }
}

impl<'a> Medium<'a> {
    pub fn new(channel: &'a ChannelConfig, conn: &'a ConnectivityConfig) -> Self {
        Medium { channel, powers: &conn.powers, relay_forward_power_dbm: conn.relay_forward_power_dbm, csi: None }
    }

    pub fn with_csi(mut self, csi: Csi) -> Self {
        self.csi = Some(csi);
        self
    }

    fn carrier_ghz(&self, band: Band) -> f64 {
        match band {
            Band::Terrestrial => self.channel.carrier_ghz,
            Band::Satellite => self.channel.satellite_carrier_ghz,
        }
    }

    fn link_for(band: Band) -> LinkType {
        match band {
            Band::Terrestrial => LinkType::V2I,
            Band::Satellite => LinkType::V2S,
        }
    }

    fn noise_mw(&self, rx: &Endpoint, band: Band) -> f64 {
        let bw = self.channel.subchannel(band, 0).bandwidth_hz;
        dbm_to_mw(noise_power_dbm_with_floor(self.channel.thermal_noise_dbm_hz, bw, rx.noise_figure_db))
    }

    /// Received power in mW at `rx` from an emitter at `pos`, median pathloss.
    fn median_rx_mw(&self, band: Band, pos: Vec3, eirp_dbm: f64, rx: &Endpoint) -> f64 {
        let d = distance(pos, rx.position);
        let pl = self.channel.median_pathloss_for(Self::link_for(band), d, self.carrier_ghz(band));
        dbm_to_mw(eirp_dbm + rx.gain_dbi - pl)
    }

    /// Actions in canonical order: mode (V2I, V2V2I, V2S2I), power
    /// descending, channel ascending.
    pub fn enumerate_actions(&self, env: &VehicleEnv, attempt: u32) -> Result<Vec<LinkAction>, ConnectivityError> {
        let mut out = Vec::new();
        for mode in Mode::ALL {
            if !env.feasible(mode) {
                continue;
            }
            for p in self.powers.sorted(mode) {
                for sc in self.channel.subchannels(mode.band()) {
                    out.push(LinkAction { mode, tx_power_dbm: p, sub_channel: sc, attempt, outcome: Outcome::Pending });
                }
            }
        }
        if out.is_empty() {
            return Err(ConnectivityError::NoFeasibleAction { vehicle: env.vehicle });
        }
        Ok(out)
    }

    /// Radio legs of the path `action` takes from `env`.
    pub fn hops(&self, env: &VehicleEnv, action: &LinkAction) -> Vec<Hop> {
        let p = action.tx_power_dbm;
        match action.mode {
            Mode::V2I => env
                .rsu
                .map(|rsu| {
                    vec![Hop { link_type: LinkType::V2I, direction: Direction::Terrestrial, tx: env.endpoint, rx: rsu, tx_power_dbm: p }]
                })
                .unwrap_or_default(),
            Mode::V2V2I => env
                .relay
                .map(|r| {
                    vec![
                        Hop { link_type: LinkType::V2V, direction: Direction::Terrestrial, tx: env.endpoint, rx: r.relay, tx_power_dbm: p },
                        Hop {
                            link_type: LinkType::V2I,
                            direction: Direction::Terrestrial,
                            tx: r.relay,
                            rx: r.rsu,
                            tx_power_dbm: self.relay_forward_power_dbm,
                        },
                    ]
                })
                .unwrap_or_default(),
            Mode::V2S2I => env
                .satellite
                .map(|s| {
                    vec![
                        Hop { link_type: LinkType::V2S, direction: Direction::Uplink, tx: s.uplink, rx: s.satellite, tx_power_dbm: p },
                        Hop {
                            link_type: LinkType::V2S,
                            direction: Direction::Downlink,
                            tx: s.satellite,
                            rx: s.gateway,
                            tx_power_dbm: self.channel.satellite_tx_power_dbm,
                        },
                    ]
                })
                .unwrap_or_default(),
        }
    }

    pub fn transmissions(&self, env: &VehicleEnv, action: &LinkAction) -> Vec<Transmission> {
        self.hops(env, action)
            .iter()
            .map(|h| Transmission {
                owner: env.vehicle,
                band: action.sub_channel.band,
                direction: h.direction,
                channel: action.sub_channel.index,
                position: h.tx.position,
                eirp_dbm: h.tx_power_dbm + h.tx.gain_dbi,
            })
            .collect()
    }

    /// Co-channel interference at `rx` from `others`, excluding the owner's
    /// own emissions. Interferers enter at median pathloss.
    pub fn interference_mw(&self, rx: &Endpoint, band: Band, direction: Direction, channel: u8, owner: u32, others: &[Transmission]) -> f64 {
        others
            .iter()
            .filter(|t| t.owner != owner && t.band == band && t.direction == direction && t.channel == channel)
            .map(|t| self.median_rx_mw(band, t.position, t.eirp_dbm, rx))
            .sum()
    }

    /// Pathloss of `hop` including the link's shadowing and LOS state for
    /// `epoch`.
    fn shadowed_pathloss_db(&self, hop: &Hop, sc: SubChannel, epoch: u64, streams: &RngStreams) -> f64 {
        let geom = LinkGeometry {
            link_type: hop.link_type,
            distance: distance(hop.tx.position, hop.rx.position),
            carrier_ghz: self.carrier_ghz(sc.band),
            tx_antenna: Antenna { height_m: 0.0, gain_dbi: hop.tx.gain_dbi },
            rx_antenna: Antenna { height_m: 0.0, gain_dbi: hop.rx.gain_dbi },
        };
        let slow = link_key(epoch, hop.tx.node, hop.rx.node);
        pathloss_db(&geom, self.channel, &mut streams.keyed(StreamId::Shadowing, slow))
    }

    fn hop_estimate(&self, env: &VehicleEnv, hop: &Hop, sc: SubChannel, snapshot: &ChannelSnapshot) -> f64 {
        let eirp = hop.tx_power_dbm + hop.tx.gain_dbi;
        let pr = match (self.csi, snapshot.round) {
            (Some(csi), Some(round)) => {
                let pl = self.shadowed_pathloss_db(hop, sc, csi.shadow_epoch(round), &csi.streams);
                let own = hop.tx.node == env.endpoint.node;
                let fading = if own { fading_gain(&csi.streams, round, hop, sc) } else { 1.0 };
                dbm_to_mw(eirp + hop.rx.gain_dbi - pl) * fading
            }
            _ => self.median_rx_mw(sc.band, hop.tx.position, eirp, &hop.rx),
        };
        let i = self.interference_mw(&hop.rx, sc.band, hop.direction, sc.index, env.vehicle, &snapshot.transmissions);
        pr / (self.noise_mw(&hop.rx, sc.band) + i)
    }

    /// SINR against the snapshot's interference; multi-hop paths report
    /// their weakest hop. The desired signal uses median pathloss and unit
    /// fading, or with CSI the gain the link showed in the snapshot's round.
    pub fn estimate_sinr(&self, env: &VehicleEnv, action: &LinkAction, snapshot: &ChannelSnapshot) -> f64 {
        self.hops(env, action)
            .iter()
            .map(|h| self.hop_estimate(env, h, action.sub_channel, snapshot))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn candidates(&self, env: &VehicleEnv, attempt: u32, snapshot: &ChannelSnapshot) -> Result<Vec<Candidate>, ConnectivityError> {
        Ok(self
            .enumerate_actions(env, attempt)?
            .into_iter()
            .map(|action| Candidate { estimate: self.estimate_sinr(env, &action, snapshot), action })
            .collect())
    }
}

/// Static geometry used to assemble per-round [`VehicleEnv`]s.
#[derive(Debug, Clone)]
pub struct RadioGeometry<'a> {
    pub channel: &'a ChannelConfig,
    pub rsus: &'a [RsuNode],
    pub frame: GroundFrame,
    pub v2v_range_m: f64,
    pub min_elevation_deg: f64,
}

/// A vehicle present in the current round: index, planar position and the
/// RSU covering it, if any.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Presence {
    pub vehicle: u32,
    pub x: f64,
    pub y: f64,
    pub serving_rsu: Option<u32>,
}

impl<'a> RadioGeometry<'a> {
    pub fn vehicle_endpoint(&self, vehicle: u32, x: f64, y: f64) -> Endpoint {
        let a = self.channel.vehicle_antenna;
        Endpoint {
            node: NodeRef::Vehicle(vehicle),
            position: [x, y, a.height_m],
            gain_dbi: a.gain_dbi,
            noise_figure_db: self.channel.vehicle_noise_figure_db,
        }
    }

    pub fn rsu_endpoint(&self, idx: u32) -> Endpoint {
        let r = &self.rsus[idx as usize];
        let a = self.channel.bs_antenna;
        Endpoint {
            node: NodeRef::Rsu(idx),
            position: [r.x, r.y, a.height_m],
            gain_dbi: a.gain_dbi,
            noise_figure_db: self.channel.bs_noise_figure_db,
        }
    }

    /// Nearest RSU whose coverage disc contains `(x, y)`.
    pub fn serving_rsu(&self, x: f64, y: f64) -> Option<u32> {
        let mut best: Option<(u32, f64)> = None;
        for (i, r) in self.rsus.iter().enumerate() {
            let d2 = (r.x - x).powi(2) + (r.y - y).powi(2);
            if d2 <= r.coverage_radius * r.coverage_radius && best.is_none_or(|(_, b)| d2 < b) {
                best = Some((i as u32, d2));
            }
        }
        best.map(|(i, _)| i)
    }

    pub fn nearest_rsu(&self, x: f64, y: f64) -> Option<u32> {
        let mut best: Option<(u32, f64)> = None;
        for (i, r) in self.rsus.iter().enumerate() {
            let d2 = (r.x - x).powi(2) + (r.y - y).powi(2);
            if best.is_none_or(|(_, b)| d2 < b) {
                best = Some((i as u32, d2));
            }
        }
        best.map(|(i, _)| i)
    }

    pub fn presence(&self, vehicle: u32, x: f64, y: f64) -> Presence {
        Presence { vehicle, x, y, serving_rsu: self.serving_rsu(x, y) }
    }

    /// Assembles the reachable set for `me`. The relay is the neighbour in
    /// V2V range, itself covered by an RSU, with the best first-hop estimate
    /// (max V2V power, best channel). The satellite is the visible one with
    /// the highest elevation; its downlink lands at the RSU nearest to the
    /// vehicle.
    pub fn build_env(
        &self,
        medium: &Medium<'_>,
        me: &Presence,
        neighbours: &[Presence],
        sky: Option<&SkySnapshot>,
        snapshot: &ChannelSnapshot,
    ) -> VehicleEnv {
        let endpoint = self.vehicle_endpoint(me.vehicle, me.x, me.y);
        let rsu = me.serving_rsu.map(|r| self.rsu_endpoint(r));

        let max_v2v = medium.powers.for_mode(Mode::V2V2I).iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut relay: Option<(RelayRoute, f64)> = None;
        if max_v2v.is_finite() {
            let range2 = self.v2v_range_m * self.v2v_range_m;
            for n in neighbours {
                let Some(n_rsu) = n.serving_rsu else { continue };
                if n.vehicle == me.vehicle || (n.x - me.x).powi(2) + (n.y - me.y).powi(2) > range2 {
                    continue;
                }
                let relay_ep = self.vehicle_endpoint(n.vehicle, n.x, n.y);
                let hop = Hop { link_type: LinkType::V2V, direction: Direction::Terrestrial, tx: endpoint, rx: relay_ep, tx_power_dbm: max_v2v };
                let probe = VehicleEnv { vehicle: me.vehicle, endpoint, rsu: None, relay: None, satellite: None };
                let score = self
                    .channel
                    .subchannels(Band::Terrestrial)
                    .map(|sc| medium.hop_estimate(&probe, &hop, sc, snapshot))
                    .fold(f64::NEG_INFINITY, f64::max);
                if relay.is_none_or(|(_, s)| score > s) {
                    relay = Some((RelayRoute { relay: relay_ep, rsu: self.rsu_endpoint(n_rsu) }, score));
                }
            }
        }

        let satellite = sky.and_then(|sky| {
            let ground = self.frame.to_ecef(me.x, me.y, self.channel.vehicle_antenna.height_m);
            let (sat, vis) = sky.best_visible(ground, self.min_elevation_deg)?;
            let gw = self.nearest_rsu(me.x, me.y)?;
            let gw_node = &self.rsus[gw as usize];
            let ka = self.channel.ka_terminal_gain_dbi;
            Some(SatelliteRoute {
                uplink: Endpoint {
                    node: NodeRef::Vehicle(me.vehicle),
                    position: ground,
                    gain_dbi: self.channel.vehicle_antenna.gain_dbi + ka,
                    noise_figure_db: self.channel.vehicle_noise_figure_db,
                },
                satellite: Endpoint {
                    node: NodeRef::Satellite(sat.sat_id as u32),
                    position: sat.position,
                    gain_dbi: self.channel.satellite_antenna_gain_dbi,
                    noise_figure_db: self.channel.satellite_noise_figure_db,
                },
                gateway: Endpoint {
                    node: NodeRef::Rsu(gw),
                    position: self.frame.to_ecef(gw_node.x, gw_node.y, self.channel.bs_antenna.height_m),
                    gain_dbi: self.channel.bs_antenna.gain_dbi + ka,
                    noise_figure_db: self.channel.bs_noise_figure_db,
                },
                elevation_deg: vis.elevation_deg,
            })
        });

        VehicleEnv { vehicle: me.vehicle, endpoint, rsu, relay: relay.map(|(r, _)| r), satellite }
    }
}

/// A feasible action with its snapshot-based SINR estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub action: LinkAction,
    pub estimate: f64,
}

/// Inputs a strategy sees for one vehicle in one round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttemptContext<'a> {
    pub round: u64,
    pub vehicle_id: &'a str,
    /// 0 for the first transmission of a message.
    pub attempt: u32,
    /// Previous action of this message, with its outcome.
    pub previous: Option<LinkAction>,
}

/// Plug-in point for selection methods. Implementations must return an
/// index into `candidates`, which is never empty.
pub trait Strategy: Send {
    fn name(&self) -> String;
    fn select(&mut self, ctx: &AttemptContext<'_>, candidates: &[Candidate], rng: &mut StreamRng) -> usize;
}

pub fn select_random<R: Rng + ?Sized>(n_candidates: usize, rng: &mut R) -> usize {
    rng.random_range(0..n_candidates)
}

fn restricted_argmax(candidates: &[Candidate], keep: impl Fn(&LinkAction) -> bool) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in candidates.iter().enumerate() {
        if keep(&c.action) && best.is_none_or(|(_, e)| c.estimate > e) {
            best = Some((i, c.estimate));
        }
    }
    best.map(|(i, _)| i)
}

/// Argmax of the estimate; the first maximum in canonical order wins ties.
pub fn select_max_sinr(candidates: &[Candidate]) -> usize {
    restricted_argmax(candidates, |_| true).expect("non-empty candidate set")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EnhancedBranch {
    /// First transmission of a message.
    Initial,
    /// Previous attempt succeeded.
    AfterSuccess,
    /// Failure branch that applied its case as written.
    Case(u8),
    /// Failure branch whose restricted set was empty; plain MAX-SINR used.
    Fallback { requested: u8 },
}

/// Enhanced MAX-SINR: MAX-SINR on the first attempt and after a success; after a
/// failure, one of four cases drawn uniformly.
pub fn select_enhanced<R: Rng + ?Sized>(ctx: &AttemptContext<'_>, candidates: &[Candidate], rng: &mut R) -> (usize, EnhancedBranch) {
    match ctx.previous {
        _ if ctx.attempt == 0 => (select_max_sinr(candidates), EnhancedBranch::Initial),
        None => (select_max_sinr(candidates), EnhancedBranch::Initial),
        Some(prev) if prev.outcome == Outcome::Success => (select_max_sinr(candidates), EnhancedBranch::AfterSuccess),
        Some(prev) => {
            let case = rng.random_range(0..4u8);
            select_enhanced_case(&prev, candidates, case)
        }
    }
}

/// One failure case of the enhanced selector, chosen explicitly.
///
/// 0: best action under a different mode. 1: best action in the same mode on
/// another sub-channel. 2: repeat the previous choice. 3: plain MAX-SINR.
pub fn select_enhanced_case(prev: &LinkAction, candidates: &[Candidate], case: u8) -> (usize, EnhancedBranch) {
    match enhanced_case_strict(prev, candidates, case) {
        Ok(i) => (i, EnhancedBranch::Case(case)),
        Err(_) => (select_max_sinr(candidates), EnhancedBranch::Fallback { requested: case }),
    }
}

/// Like [`select_enhanced_case`] but reports an empty restriction instead of
/// falling back.
pub fn enhanced_case_strict(prev: &LinkAction, candidates: &[Candidate], case: u8) -> Result<usize, ConnectivityError> {
    let pick = match case {
        0 => restricted_argmax(candidates, |a| a.mode != prev.mode),
        1 => restricted_argmax(candidates, |a| a.mode == prev.mode && a.sub_channel.index != prev.sub_channel.index),
        2 => candidates.iter().position(|c| c.action.same_choice(prev)),
        _ => Some(select_max_sinr(candidates)),
    };
    pick.ok_or(ConnectivityError::EmptyRestriction { case })
}

#[derive(Debug, Default, Clone)]
pub struct RandomStrategy;

impl Strategy for RandomStrategy {
    fn name(&self) -> String {
        "random".into()
    }
    fn select(&mut self, _: &AttemptContext<'_>, candidates: &[Candidate], rng: &mut StreamRng) -> usize {
        select_random(candidates.len(), rng)
    }
}

#[derive(Debug, Default, Clone)]
pub struct MaxSinrStrategy;

impl Strategy for MaxSinrStrategy {
    fn name(&self) -> String {
        "max_sinr".into()
    }
    fn select(&mut self, _: &AttemptContext<'_>, candidates: &[Candidate], _: &mut StreamRng) -> usize {
        select_max_sinr(candidates)
    }
}

/// Enhanced MAX-SINR. `forced_case` pins the failure branch (for testing); branch
/// counts are kept for diagnostics.
#[derive(Debug, Default, Clone)]
pub struct EnhancedMaxSinr {
    pub forced_case: Option<u8>,
    pub branch_counts: HashMap<String, u64>,
}

impl Strategy for EnhancedMaxSinr {
    fn name(&self) -> String {
        "enhanced_max_sinr".into()
    }
    fn select(&mut self, ctx: &AttemptContext<'_>, candidates: &[Candidate], rng: &mut StreamRng) -> usize {
        let (idx, branch) = match (self.forced_case, ctx.previous) {
            (Some(case), Some(prev)) if ctx.attempt > 0 && prev.outcome == Outcome::Failure => {
                select_enhanced_case(&prev, candidates, case)
            }
            _ => select_enhanced(ctx, candidates, rng),
        };
        *self.branch_counts.entry(format!("{branch:?}")).or_default() += 1;
        idx
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct TraceChoice {
    mode: Mode,
    power_dbm: f64,
    channel: u8,
}

/// Replays externally computed decisions from a CSV with header
/// `round,vehicle_id,mode,power_dbm,channel`. Rounds or vehicles missing from
/// the file, or choices that are not feasible this round, fall back to
/// MAX-SINR.
#[derive(Debug, Clone)]
pub struct TraceStrategy {
    path: PathBuf,
    choices: HashMap<(u64, String), TraceChoice>,
    pub fallbacks: u64,
}

impl TraceStrategy {
    pub fn load(path: &Path) -> Result<Self, ConnectivityError> {
        let file = std::fs::File::open(path)
            .map_err(|e| ConnectivityError::Trace { path: path.to_owned(), line: 0, msg: e.to_string() })?;
        Self::from_reader(path, file)
    }

    pub fn from_reader<R: Read>(path: &Path, input: R) -> Result<Self, ConnectivityError> {
        let err = |line: u64, msg: String| ConnectivityError::Trace { path: path.to_owned(), line, msg };
        let mut rdr = csv::Reader::from_reader(input);
        let header = rdr.headers().map_err(|e| err(1, e.to_string()))?.clone();
        let expected = ["round", "vehicle_id", "mode", "power_dbm", "channel"];
        if header.iter().collect::<Vec<_>>() != expected {
            return Err(err(1, format!("header must be {}", expected.join(","))));
        }
        let mut choices = HashMap::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| err(e.position().map(|p| p.line()).unwrap_or(0), e.to_string()))?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            let round: u64 = rec[0].parse().map_err(|_| err(line, format!("bad round `{}`", &rec[0])))?;
            let mode: Mode = rec[2].parse().map_err(|m| err(line, m))?;
            let power_dbm: f64 = rec[3].parse().map_err(|_| err(line, format!("bad power `{}`", &rec[3])))?;
            let channel: u8 = rec[4].parse().map_err(|_| err(line, format!("bad channel `{}`", &rec[4])))?;
            choices.insert((round, rec[1].to_string()), TraceChoice { mode, power_dbm, channel });
        }
        Ok(TraceStrategy { path: path.to_owned(), choices, fallbacks: 0 })
    }

    pub fn len(&self) -> usize {
        self.choices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.choices.is_empty()
    }
}

impl Strategy for TraceStrategy {
    fn name(&self) -> String {
        format!("trace:{}", self.path.display())
    }
    fn select(&mut self, ctx: &AttemptContext<'_>, candidates: &[Candidate], _: &mut StreamRng) -> usize {
        let hit = self.choices.get(&(ctx.round, ctx.vehicle_id.to_string())).and_then(|c| {
            candidates.iter().position(|cand| {
                cand.action.mode == c.mode
                    && (cand.action.tx_power_dbm - c.power_dbm).abs() < 1e-9
                    && cand.action.sub_channel.index == c.channel
            })
        });
        hit.unwrap_or_else(|| {
            self.fallbacks += 1;
            select_max_sinr(candidates)
        })
    }
}

/// Strategy selector as written in configs and on the command line.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum StrategyKind {
    Random,
    MaxSinr,
    EnhancedMaxSinr,
    Trace(PathBuf),
}

impl FromStr for StrategyKind {
    type Err = ConnectivityError;
    fn from_str(s: &str) -> Result<Self, ConnectivityError> {
        match s {
            "random" => Ok(StrategyKind::Random),
            "max_sinr" => Ok(StrategyKind::MaxSinr),
            "enhanced_max_sinr" => Ok(StrategyKind::EnhancedMaxSinr),
            _ => match s.strip_prefix("trace:") {
                Some(p) if !p.is_empty() => Ok(StrategyKind::Trace(PathBuf::from(p))),
                _ => Err(ConnectivityError::UnknownStrategy(s.to_string())),
            },
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StrategyKind::Random => f.write_str("random"),
            StrategyKind::MaxSinr => f.write_str("max_sinr"),
            StrategyKind::EnhancedMaxSinr => f.write_str("enhanced_max_sinr"),
            StrategyKind::Trace(p) => write!(f, "trace:{}", p.display()),
        }
    }
}

impl StrategyKind {
    pub fn build(&self) -> Result<Box<dyn Strategy>, ConnectivityError> {
        Ok(match self {
            StrategyKind::Random => Box::new(RandomStrategy),
            StrategyKind::MaxSinr => Box::new(MaxSinrStrategy),
            StrategyKind::EnhancedMaxSinr => Box::new(EnhancedMaxSinr::default()),
            StrategyKind::Trace(p) => Box::new(TraceStrategy::load(p)?),
        })
    }
}

/// Key for per-(round, vehicle, slot) random cells.
pub fn cell_key(round: u64, vehicle: u32, slot: u8) -> u64 {
    (round << 24) | ((vehicle as u64 & 0x3f_ffff) << 2) | (slot as u64 & 0x3)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannedAttempt {
    pub env: VehicleEnv,
    pub action: LinkAction,
    pub estimate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HopResult {
    pub link_type: LinkType,
    pub sinr: f64,
    pub outcome: LinkOutcome,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttemptResult {
    pub vehicle: u32,
    /// The chosen action with its realized outcome.
    pub action: LinkAction,
    pub estimate: f64,
    /// Weakest realized hop.
    pub realized_sinr: f64,
    pub success: bool,
    /// Sum over hops, seconds.
    pub latency_s: f64,
    pub destination: Option<u32>,
    pub hops: Vec<HopResult>,
}

impl AttemptResult {
    pub fn arrival_time(&self, clock: SimTime) -> Option<SimTime> {
        self.success.then(|| clock + SimTime::span_ceil(self.latency_s))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundResult {
    pub results: Vec<AttemptResult>,
    pub snapshot: ChannelSnapshot,
}

/// Key for the slow-fading state of one link during one shadowing epoch.
pub fn link_key(epoch: u64, tx: NodeRef, rx: NodeRef) -> u64 {
    fn code(n: NodeRef) -> u64 {
        match n {
            NodeRef::Vehicle(i) => i as u64,
            NodeRef::Rsu(i) => (1 << 32) | i as u64,
            NodeRef::Satellite(i) => (2 << 32) | i as u64,
        }
    }
    let mut h = epoch;
    for x in [code(tx), code(rx)] {
        h = splitmix(h ^ x);
    }
    h
}

/// Rayleigh power gain of one hop on one sub-channel during `round`.
pub fn fading_gain(streams: &RngStreams, round: u64, hop: &Hop, sc: SubChannel) -> f64 {
    let band = match sc.band {
        Band::Terrestrial => 0u64,
        Band::Satellite => 1,
    };
    let key = splitmix(link_key(round, hop.tx.node, hop.rx.node) ^ (band << 8 | sc.index as u64));
    rayleigh_power_gain(&mut streams.keyed(StreamId::Fading, key))
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Realizes one round: the full set of this round's transmissions is built
/// first, then each hop's SINR is computed against that set. Shadowing and
/// the LOS state are drawn per link and `shadow_epoch`, so retries within an
/// epoch see the same slow fading; Rayleigh fading is drawn per round,
/// link and sub-channel.
pub fn run_attempt_round(
    medium: &Medium<'_>,
    plans: &[PlannedAttempt],
    round: u64,
    shadow_epoch: u64,
    streams: &RngStreams,
) -> RoundResult {
    let transmissions: Vec<Transmission> = plans.iter().flat_map(|p| medium.transmissions(&p.env, &p.action)).collect();
    let limits = medium.channel.limits();
    let payload = medium.channel.payload_bits();
    let mut results = Vec::with_capacity(plans.len());
    for plan in plans {
        let sc = plan.action.sub_channel;
        let mut hops = Vec::new();
        for hop in medium.hops(&plan.env, &plan.action).iter() {
            let d = distance(hop.tx.position, hop.rx.position);
            let pl = medium.shadowed_pathloss_db(hop, sc, shadow_epoch, streams);
            let fading = fading_gain(streams, round, hop, sc);
            let pr_dbm = hop.tx_power_dbm + hop.tx.gain_dbi + hop.rx.gain_dbi - pl + linear_to_db(fading);
            let i = medium.interference_mw(&hop.rx, sc.band, hop.direction, sc.index, plan.env.vehicle, &transmissions);
            let sinr = dbm_to_mw(pr_dbm) / (medium.noise_mw(&hop.rx, sc.band) + i);
            let outcome = link_outcome(sinr, sc.bandwidth_hz, payload, d, &limits);
            hops.push(HopResult { link_type: hop.link_type, sinr, outcome });
        }
        let success = !hops.is_empty() && hops.iter().all(|h| h.outcome.success);
        let latency_s = hops.iter().map(|h| h.outcome.latency_s).sum();
        let realized_sinr = hops.iter().map(|h| h.sinr).fold(f64::INFINITY, f64::min);
        let mut action = plan.action;
        action.outcome = if success { Outcome::Success } else { Outcome::Failure };
        results.push(AttemptResult {
            vehicle: plan.env.vehicle,
            action,
            estimate: plan.estimate,
            realized_sinr,
            success,
            latency_s,
            destination: plan.env.destination(plan.action.mode),
            hops,
        });
    }
    RoundResult { results, snapshot: ChannelSnapshot { round: Some(round), transmissions } }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyRow {
    pub round: u64,
    pub vehicle_id: String,
    pub mode: Mode,
    pub power_dbm: f64,
    pub band: Band,
    pub channel: u8,
    pub estimated_sinr_db: f64,
    pub realized_sinr_db: f64,
    pub outcome: String,
}

impl OccupancyRow {
    pub fn from_result(round: u64, vehicle_id: &str, r: &AttemptResult) -> Self {
        OccupancyRow {
            round,
            vehicle_id: vehicle_id.to_string(),
            mode: r.action.mode,
            power_dbm: r.action.tx_power_dbm,
            band: r.action.sub_channel.band,
            channel: r.action.sub_channel.index,
            estimated_sinr_db: linear_to_db(r.estimate),
            realized_sinr_db: linear_to_db(r.realized_sinr),
            outcome: r.action.outcome.as_str().to_string(),
        }
    }
}

pub fn write_occupancy_csv<W: Write>(rows: &[OccupancyRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
