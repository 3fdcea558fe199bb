//! Radio link physics: pathloss, shadowing, Rayleigh fading, thermal noise,
//! co-channel interference and the SINR ratio
//!
//! ```text
//!            PR
//! SINR = ----------
//!         N + Σ I
//! ```
//!
//! with every term in linear milliwatts. A link succeeds when its Shannon
//! transmit time plus propagation fits in the per-leg delay budget and its
//! SINR clears the configured floor.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::engine::sample_exponential;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LinkType {
    V2V,
    V2I,
    V2S,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Antenna {
    pub height_m: f64,
    pub gain_dbi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkGeometry {
    pub link_type: LinkType,
    /// Meters; slant range for satellite legs.
    pub distance: f64,
    pub carrier_ghz: f64,
    pub tx_antenna: Antenna,
    pub rx_antenna: Antenna,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Band {
    Terrestrial,
    Satellite,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubChannel {
    pub band: Band,
    pub index: u8,
    pub bandwidth_hz: f64,
}

/// Log-distance model `constant + a·log10(d_m) + b·log10(f_GHz) + extra`
/// with zero-mean log-normal shadowing of `shadowing_sigma_db`.
///
/// The free-space forms `32.45 + 20log10(f_MHz) + 20log10(d_km)` and
/// `32.45 + 20log10(f_GHz) + 20log10(d_m)` are the same curve, so satellite
/// legs use this shape too.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathlossModel {
    pub constant_db: f64,
    pub distance_coef: f64,
    pub frequency_coef: f64,
    pub extra_loss_db: f64,
    pub shadowing_sigma_db: f64,
}

impl PathlossModel {
    /// LOS highway form used for V2V and V2I.
    pub const TERRESTRIAL_LOS: PathlossModel = PathlossModel {
        constant_db: 32.4,
        distance_coef: 20.0,
        frequency_coef: 20.0,
        extra_loss_db: 0.0,
        shadowing_sigma_db: 3.0,
    };

    /// Urban NLOS form, used only when the NLOS switch is on.
    pub const TERRESTRIAL_NLOS: PathlossModel = PathlossModel {
        constant_db: 36.85,
        distance_coef: 30.0,
        frequency_coef: 18.9,
        extra_loss_db: 0.0,
        shadowing_sigma_db: 4.0,
    };

    /// Free-space loss plus 2.2 dB scintillation.
    pub const SATELLITE: PathlossModel = PathlossModel {
        constant_db: 32.45,
        distance_coef: 20.0,
        frequency_coef: 20.0,
        extra_loss_db: 2.2,
        shadowing_sigma_db: 2.0,
    };

    pub fn median_db(&self, distance_m: f64, carrier_ghz: f64) -> f64 {
        self.constant_db
            + self.distance_coef * distance_m.max(1.0).log10()
            + self.frequency_coef * carrier_ghz.log10()
            + self.extra_loss_db
    }

    pub fn shadowing_db<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.shadowing_sigma_db <= 0.0 {
            return 0.0;
        }
        Normal::new(0.0, self.shadowing_sigma_db).expect("finite sigma").sample(rng)
    }
}

/// Distance-dependent LOS probability `min(1, a·exp(-b·d))`; NLOS links use
/// [`PathlossModel::TERRESTRIAL_NLOS`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NlosSwitch {
    pub enabled: bool,
    pub los_scale: f64,
    pub los_decay_per_m: f64,
    pub model: PathlossModel,
}

impl Default for NlosSwitch {
    fn default() -> Self {
        NlosSwitch { enabled: false, los_scale: 1.05, los_decay_per_m: 0.0114, model: PathlossModel::TERRESTRIAL_NLOS }
    }
}

impl NlosSwitch {
    pub fn los_probability(&self, distance_m: f64) -> f64 {
        (self.los_scale * (-self.los_decay_per_m * distance_m).exp()).min(1.0)
    }
}

/// Channel-model constants as they appear in the scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelConfig {
    pub carrier_ghz: f64,
    pub satellite_carrier_ghz: f64,
    pub thermal_noise_dbm_hz: f64,
    pub vehicle_antenna: Antenna,
    pub bs_antenna: Antenna,
    pub vehicle_noise_figure_db: f64,
    pub bs_noise_figure_db: f64,
    pub satellite_noise_figure_db: f64,
    pub satellite_tx_power_dbm: f64,
    pub satellite_antenna_gain_dbi: f64,
    /// Extra gain of the Ka-band terminal at the ground end of satellite legs.
    pub ka_terminal_gain_dbi: f64,
    pub terrestrial_subchannels: u8,
    pub terrestrial_bandwidth_hz: f64,
    pub satellite_subchannels: u8,
    pub satellite_bandwidth_hz: f64,
    pub terrestrial_pathloss: PathlossModel,
    pub satellite_pathloss: PathlossModel,
    pub nlos: NlosSwitch,
    pub payload_bytes: u32,
    pub max_transmission_delay_ms: f64,
    pub sinr_min_db: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            carrier_ghz: 3.5,
            satellite_carrier_ghz: 30.0,
            thermal_noise_dbm_hz: -174.0,
            vehicle_antenna: Antenna { height_m: 1.5, gain_dbi: 3.0 },
            bs_antenna: Antenna { height_m: 25.0, gain_dbi: 8.0 },
            vehicle_noise_figure_db: 9.0,
            bs_noise_figure_db: 5.0,
            satellite_noise_figure_db: 1.2,
            satellite_tx_power_dbm: 43.2,
            satellite_antenna_gain_dbi: 30.5,
            ka_terminal_gain_dbi: 22.0,
            terrestrial_subchannels: 5,
            terrestrial_bandwidth_hz: 1e6,
            satellite_subchannels: 10,
            satellite_bandwidth_hz: 20e6,
            terrestrial_pathloss: PathlossModel::TERRESTRIAL_LOS,
            satellite_pathloss: PathlossModel::SATELLITE,
            nlos: NlosSwitch::default(),
            payload_bytes: 650,
            max_transmission_delay_ms: 3.0,
            sinr_min_db: 0.0,
        }
    }
}

impl ChannelConfig {
    pub fn subchannel(&self, band: Band, index: u8) -> SubChannel {
        let bandwidth_hz = match band {
            Band::Terrestrial => self.terrestrial_bandwidth_hz,
            Band::Satellite => self.satellite_bandwidth_hz,
        };
        SubChannel { band, index, bandwidth_hz }
    }

    pub fn subchannels(&self, band: Band) -> impl Iterator<Item = SubChannel> + '_ {
        let n = match band {
            Band::Terrestrial => self.terrestrial_subchannels,
            Band::Satellite => self.satellite_subchannels,
        };
        (0..n).map(move |i| self.subchannel(band, i))
    }

    pub fn limits(&self) -> LinkLimits {
        LinkLimits {
            max_delay_s: self.max_transmission_delay_ms * 1e-3,
            sinr_min_linear: db_to_linear(self.sinr_min_db),
        }
    }

    pub fn payload_bits(&self) -> f64 {
        self.payload_bytes as f64 * 8.0
    }

    /// Median pathloss used for estimates and interferers: terrestrial links
    /// take the NLOS curve once LOS becomes less likely than not.
    pub fn median_pathloss_for(&self, link: LinkType, distance_m: f64, carrier_ghz: f64) -> f64 {
        let model = if link != LinkType::V2S && self.nlos.enabled && self.nlos.los_probability(distance_m) < 0.5 {
            &self.nlos.model
        } else {
            self.model_for(link)
        };
        model.median_db(distance_m, carrier_ghz)
    }

    pub fn model_for(&self, link: LinkType) -> &PathlossModel {
        match link {
            LinkType::V2S => &self.satellite_pathloss,
            _ => &self.terrestrial_pathloss,
        }
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    db_to_linear(dbm)
}

pub fn mw_to_dbm(mw: f64) -> f64 {
    if mw <= 0.0 {
        f64::NEG_INFINITY
    } else {
        linear_to_db(mw)
    }
}

/// Median pathloss for `geom` under `model`, no shadowing.
pub fn median_pathloss_db(geom: &LinkGeometry, model: &PathlossModel) -> f64 {
    model.median_db(geom.distance, geom.carrier_ghz)
}

/// Median pathloss plus one log-normal shadowing draw. Terrestrial links
/// switch to the NLOS curve with probability `1 - P_LOS(d)` when enabled.
pub fn pathloss_db<R: Rng + ?Sized>(geom: &LinkGeometry, cfg: &ChannelConfig, rng: &mut R) -> f64 {
    let mut model = cfg.model_for(geom.link_type);
    if geom.link_type != LinkType::V2S && cfg.nlos.enabled {
        let p_los = cfg.nlos.los_probability(geom.distance);
        if rng.random::<f64>() >= p_los {
            model = &cfg.nlos.model;
        }
    }
    median_pathloss_db(geom, model) + model.shadowing_db(rng)
}

pub fn noise_power_dbm(bandwidth_hz: f64, noise_figure_db: f64) -> f64 {
    noise_power_dbm_with_floor(-174.0, bandwidth_hz, noise_figure_db)
}

pub fn noise_power_dbm_with_floor(floor_dbm_hz: f64, bandwidth_hz: f64, noise_figure_db: f64) -> f64 {
    floor_dbm_hz + 10.0 * bandwidth_hz.log10() + noise_figure_db
}

/// `tx + gains - pathloss + 10·log10(fading)`. Satellite gains enter through
/// the antenna entries of `geom`.
pub fn received_power_dbm(tx_power_dbm: f64, geom: &LinkGeometry, pathloss_db: f64, fading_gain: f64) -> f64 {
    tx_power_dbm + geom.tx_antenna.gain_dbi + geom.rx_antenna.gain_dbi - pathloss_db + linear_to_db(fading_gain)
}

/// Unit-mean exponential power gain of a Rayleigh channel.
pub fn rayleigh_power_gain<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    sample_exponential(1.0, rng).expect("unit rate")
}

/// Linear SINR from dBm terms. Interferers of `-inf` dBm contribute nothing.
pub fn sinr(pr_dbm: f64, noise_dbm: f64, interferers_dbm: &[f64]) -> f64 {
    let i: f64 = interferers_dbm.iter().map(|&p| dbm_to_mw(p)).sum();
    sinr_mw(dbm_to_mw(pr_dbm), dbm_to_mw(noise_dbm), i)
}

pub fn sinr_mw(pr_mw: f64, noise_mw: f64, interference_mw: f64) -> f64 {
    pr_mw / (noise_mw + interference_mw)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinkSample {
    pub received_power: f64,
    pub noise_power: f64,
    pub interference_power: f64,
    pub sinr_linear: f64,
}

impl LinkSample {
    pub fn new(received_dbm: f64, noise_dbm: f64, interference_mw: f64) -> Self {
        LinkSample {
            received_power: received_dbm,
            noise_power: noise_dbm,
            interference_power: mw_to_dbm(interference_mw),
            sinr_linear: sinr_mw(dbm_to_mw(received_dbm), dbm_to_mw(noise_dbm), interference_mw),
        }
    }

    /// Recomputes the ratio from the stored dBm components.
    pub fn recomputed_sinr(&self) -> f64 {
        let i = if self.interference_power == f64::NEG_INFINITY { 0.0 } else { dbm_to_mw(self.interference_power) };
        sinr_mw(dbm_to_mw(self.received_power), dbm_to_mw(self.noise_power), i)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkLimits {
    pub max_delay_s: f64,
    pub sinr_min_linear: f64,
}

impl Default for LinkLimits {
    fn default() -> Self {
        LinkLimits { max_delay_s: 3e-3, sinr_min_linear: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinkOutcome {
    pub success: bool,
    pub rate_bps: f64,
    pub transmit_s: f64,
    pub propagation_s: f64,
    pub latency_s: f64,
}

pub fn shannon_rate(bandwidth_hz: f64, sinr_linear: f64) -> f64 {
    bandwidth_hz * (1.0 + sinr_linear).log2()
}

pub fn link_outcome(sinr_linear: f64, bandwidth_hz: f64, payload_bits: f64, distance_m: f64, limits: &LinkLimits) -> LinkOutcome {
    let rate_bps = shannon_rate(bandwidth_hz, sinr_linear);
    let transmit_s = if rate_bps > 0.0 { payload_bits / rate_bps } else { f64::INFINITY };
    let propagation_s = distance_m / SPEED_OF_LIGHT;
    let latency_s = transmit_s + propagation_s;
    LinkOutcome {
        success: latency_s <= limits.max_delay_s && sinr_linear >= limits.sinr_min_linear,
        rate_bps,
        transmit_s,
        propagation_s,
        latency_s,
    }
}

/// Multi-hop path: latencies add, success requires every hop.
pub fn combine_hops(hops: &[LinkOutcome]) -> (bool, f64) {
    let ok = hops.iter().all(|h| h.success);
    let latency = hops.iter().map(|h| h.latency_s).sum();
    (ok, latency)
}
