//! Scenario files: loading, unknown-key detection, validation and the
//! annotated effective-config echo.
//!
//! The file is TOML with one section per layer (`[region]`, `[traffic]`,
//! `[satellite]`, `[channel]`, `[connectivity]`, `[blockchain]`). A `.json`
//! file with the same structure is accepted too. Every key is optional.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::blockchain::BlockchainConfig;
use crate::channel::ChannelConfig;
use crate::connectivity::{ConnectivityConfig, StrategyKind};
use crate::mobility::{place_rsus, RegionSpec};
use crate::satellite::ConstellationSpec;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub field: String,
    pub msg: String,
}

impl FieldError {
    pub fn new(field: &str, msg: impl Into<String>) -> Self {
        FieldError { field: field.to_string(), msg: msg.into() }
    }
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.msg)
    }
}

fn list(errors: &[FieldError]) -> String {
    errors.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {msg}")]
    Io { path: PathBuf, msg: String },
    #[error("{path}: parse error: {msg}")]
    Parse { path: PathBuf, msg: String },
    #[error("unknown key `{key}`")]
    UnknownKey { key: String },
    #[error("invalid configuration: {}", list(.0))]
    Validation(Vec<FieldError>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceSource {
    Synthetic,
    Fcd,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrafficConfig {
    pub source: TraceSource,
    /// Fleet size for the synthetic generator.
    pub n_vehicles: usize,
    pub path: Option<PathBuf>,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        TrafficConfig { source: TraceSource::Synthetic, n_vehicles: 300, path: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SatelliteSource {
    Parametric,
    Tle,
    Disabled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SatelliteConfig {
    pub source: SatelliteSource,
    pub tle_path: Option<PathBuf>,
    pub constellation: ConstellationSpec,
    pub min_elevation_deg: f64,
    /// Satellite positions are recomputed at this spacing.
    pub refresh_interval_s: f64,
    pub candidate_margin_deg: f64,
}

impl Default for SatelliteConfig {
    fn default() -> Self {
        SatelliteConfig {
            source: SatelliteSource::Parametric,
            tle_path: None,
            constellation: ConstellationSpec::default(),
            min_elevation_deg: 10.0,
            refresh_interval_s: 1.0,
            candidate_margin_deg: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub scenario: String,
    pub seed: u64,
    pub sim_time_s: f64,
    pub message_period_s: f64,
    pub region: RegionSpec,
    pub traffic: TrafficConfig,
    pub satellite: SatelliteConfig,
    pub channel: ChannelConfig,
    pub connectivity: ConnectivityConfig,
    pub blockchain: BlockchainConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            scenario: "default".into(),
            seed: 1,
            sim_time_s: 50.0,
            message_period_s: 0.5,
            region: RegionSpec::default(),
            traffic: TrafficConfig::default(),
            satellite: SatelliteConfig::default(),
            channel: ChannelConfig::default(),
            connectivity: ConnectivityConfig::default(),
            blockchain: BlockchainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfigFormat {
    Toml,
    Json,
}

impl ConfigFormat {
    pub fn for_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => ConfigFormat::Json,
            _ => ConfigFormat::Toml,
        }
    }
}

/// Reads, checks and validates a scenario file. Relative paths inside it
/// are taken relative to the file's directory.
pub fn load_scenario(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io { path: path.to_owned(), msg: e.to_string() })?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let cfg = parse_scenario(&text, ConfigFormat::for_path(path), path)?.resolve_paths(&base);
    cfg.validate()?;
    Ok(cfg)
}

/// Parses without resolving paths or validating. `origin` only labels errors.
pub fn parse_scenario(text: &str, format: ConfigFormat, origin: &Path) -> Result<ScenarioConfig, ConfigError> {
    let parse = |msg: String| ConfigError::Parse { path: origin.to_owned(), msg };
    let value: Value = match format {
        ConfigFormat::Toml => toml::from_str(text).map_err(|e| parse(e.to_string()))?,
        ConfigFormat::Json => serde_json::from_str(text).map_err(|e| parse(e.to_string()))?,
    };
    if !value.is_object() {
        return Err(parse("top level must be a table".into()));
    }
    let schema = serde_json::to_value(schema_sample()).expect("config serializes");
    check_keys(&value, &schema, "")?;
    serde_json::from_value(value).map_err(|e| parse(e.to_string()))
}

/// Default config with every optional field filled, so its serialized form
/// lists every accepted key.
fn schema_sample() -> ScenarioConfig {
    let mut s = ScenarioConfig::default();
    s.traffic.path = Some(PathBuf::new());
    s.satellite.tle_path = Some(PathBuf::new());
    s
}

fn check_keys(value: &Value, schema: &Value, prefix: &str) -> Result<(), ConfigError> {
    match (value, schema) {
        (Value::Object(v), Value::Object(s)) => {
            for (k, child) in v {
                let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                match s.get(k) {
                    Some(sc) => check_keys(child, sc, &path)?,
                    None => return Err(ConfigError::UnknownKey { key: path }),
                }
            }
            Ok(())
        }
        (Value::Array(v), Value::Array(s)) => match s.first() {
            Some(proto @ Value::Object(_)) => v.iter().try_for_each(|e| check_keys(e, proto, prefix)),
            _ => Ok(()),
        },
        _ => Ok(()),
    }
}

impl ScenarioConfig {
    pub fn strategy(&self) -> Result<StrategyKind, FieldError> {
        StrategyKind::from_str(&self.connectivity.strategy)
            .map_err(|e| FieldError { field: "connectivity.strategy".into(), msg: e.to_string() })
    }

    pub fn resolve_paths(mut self, base: &Path) -> Self {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        fix(&mut self.traffic.path);
        fix(&mut self.satellite.tle_path);
        if let Some(rest) = self.connectivity.strategy.strip_prefix("trace:") {
            let p = Path::new(rest);
            if p.is_relative() && !rest.is_empty() {
                self.connectivity.strategy = format!("trace:{}", base.join(p).display());
            }
        }
        self
    }

    /// Collects every violated constraint.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut errs = Vec::new();
        let mut need = |ok: bool, field: &str, msg: String| {
            if !ok {
                errs.push(FieldError { field: field.to_string(), msg });
            }
        };
        let pos = |v: f64| v > 0.0 && v.is_finite();

        need(pos(self.sim_time_s), "sim_time_s", format!("must be positive, got {}", self.sim_time_s));
        need(pos(self.message_period_s), "message_period_s", format!("must be positive, got {}", self.message_period_s));
        let c = &self.connectivity;
        need(pos(c.round_interval_ms), "connectivity.round_interval_ms", format!("must be positive, got {}", c.round_interval_ms));
        if pos(self.message_period_s) && pos(c.round_interval_ms) {
            let slots = self.message_period_s * 1000.0 / c.round_interval_ms;
            need(
                slots >= 1.0 && (slots - slots.round()).abs() < 1e-6,
                "connectivity.round_interval_ms",
                format!("message period {} s is not a whole number of {} ms rounds", self.message_period_s, c.round_interval_ms),
            );
        }
        need(c.retry_budget >= 1, "connectivity.retry_budget", "must be at least 1".into());
        need(c.v2v_range_m >= 0.0, "connectivity.v2v_range_m", format!("must be non-negative, got {}", c.v2v_range_m));
        need(!c.powers.v2i_dbm.is_empty(), "connectivity.powers.v2i_dbm", "must not be empty".into());
        need(!c.powers.v2v_dbm.is_empty(), "connectivity.powers.v2v_dbm", "must not be empty".into());
        need(!c.powers.v2s_dbm.is_empty(), "connectivity.powers.v2s_dbm", "must not be empty".into());
        if let Err(e) = self.strategy() {
            need(false, &e.field, e.msg);
        } else if let Ok(StrategyKind::Trace(p)) = self.strategy() {
            need(p.is_file(), "connectivity.strategy", format!("action trace {} not found", p.display()));
        }

        let b = &self.blockchain;
        need(pos(b.block_interval_s), "blockchain.block_interval_s", format!("must be positive, got {}", b.block_interval_s));
        need(pos(b.receive_time_s), "blockchain.receive_time_s", format!("must be positive, got {}", b.receive_time_s));
        need(b.gas_per_tx > 0, "blockchain.gas_per_tx", "must be positive".into());
        need(b.gas_limit >= b.gas_per_tx, "blockchain.gas_limit", format!("{} cannot hold one {}-gas transaction", b.gas_limit, b.gas_per_tx));
        need(pos(b.hash_power_mean), "blockchain.hash_power_mean", format!("must be positive, got {}", b.hash_power_mean));
        need(b.hash_power_sd >= 0.0, "blockchain.hash_power_sd", format!("must be non-negative, got {}", b.hash_power_sd));

        let ch = &self.channel;
        need(pos(ch.carrier_ghz), "channel.carrier_ghz", format!("must be positive, got {}", ch.carrier_ghz));
        need(pos(ch.satellite_carrier_ghz), "channel.satellite_carrier_ghz", format!("must be positive, got {}", ch.satellite_carrier_ghz));
        need(pos(ch.terrestrial_bandwidth_hz), "channel.terrestrial_bandwidth_hz", format!("must be positive, got {}", ch.terrestrial_bandwidth_hz));
        need(pos(ch.satellite_bandwidth_hz), "channel.satellite_bandwidth_hz", format!("must be positive, got {}", ch.satellite_bandwidth_hz));
        need(ch.terrestrial_subchannels >= 1, "channel.terrestrial_subchannels", "must be at least 1".into());
        need(ch.satellite_subchannels >= 1, "channel.satellite_subchannels", "must be at least 1".into());
        need(ch.payload_bytes >= 1, "channel.payload_bytes", "must be at least 1".into());
        need(pos(ch.max_transmission_delay_ms), "channel.max_transmission_delay_ms", format!("must be positive, got {}", ch.max_transmission_delay_ms));

        let r = &self.region;
        need(pos(r.width_m) && pos(r.height_m), "region", "width_m and height_m must be positive".into());
        need(pos(r.rsu_coverage_m), "region.rsu_coverage_m", format!("must be positive, got {}", r.rsu_coverage_m));
        need(!r.zones.is_empty(), "region.zones", "at least one zone is required".into());
        match place_rsus(r, b.n_miners) {
            Ok(rsus) => need(
                b.n_miners >= 1 && b.n_miners <= rsus.len(),
                "blockchain.n_miners",
                format!("must be between 1 and the number of RSUs ({}), got {}", rsus.len(), b.n_miners),
            ),
            Err(e) => need(false, "region.zones", e.to_string()),
        }

        let t = &self.traffic;
        match t.source {
            TraceSource::Synthetic => need(t.n_vehicles >= 1, "traffic.n_vehicles", "must be at least 1".into()),
            TraceSource::Fcd | TraceSource::Csv => match &t.path {
                Some(p) => need(p.is_file(), "traffic.path", format!("{} not found", p.display())),
                None => need(false, "traffic.path", "required for fcd and csv sources".into()),
            },
        }

        let s = &self.satellite;
        need(pos(s.refresh_interval_s), "satellite.refresh_interval_s", format!("must be positive, got {}", s.refresh_interval_s));
        need((0.0..90.0).contains(&s.min_elevation_deg), "satellite.min_elevation_deg", format!("must be in [0, 90), got {}", s.min_elevation_deg));
        match s.source {
            SatelliteSource::Tle => match &s.tle_path {
                Some(p) => need(p.is_file(), "satellite.tle_path", format!("{} not found", p.display())),
                None => need(false, "satellite.tle_path", "required for the tle source".into()),
            },
            SatelliteSource::Parametric => need(
                s.constellation.planes >= 1 && s.constellation.per_plane >= 1 && pos(s.constellation.altitude_km),
                "satellite.constellation",
                "needs at least one plane, one satellite per plane and a positive altitude".into(),
            ),
            SatelliteSource::Disabled => {}
        }

        if errs.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Validation(errs))
        }
    }

    /// TOML rendering of the effective configuration; every value carries a
    /// `# paper` or `# decision` provenance tag. Parsing the result gives back
    /// this configuration.
    pub fn effective_toml(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let mut out = String::from("# Effective scenario configuration.\n# paper: reference parameter table; decision: implementation default or override.\n");
        if let Value::Object(map) = &value {
            emit_table(&mut out, "", map);
        }
        out
    }
}

/// Keys whose defaults come from the reference parameter table. `*` matches
/// one path segment.
const PAPER_KEYS: &[&str] = &[
    "sim_time_s",
    "message_period_s",
    "region.width_m",
    "region.height_m",
    "region.road_area_km2",
    "region.rsu_coverage_m",
    "region.classes.*.rsu_spacing_m",
    "region.classes.*.density_per_km",
    "satellite.constellation.altitude_km",
    "channel.carrier_ghz",
    "channel.satellite_carrier_ghz",
    "channel.thermal_noise_dbm_hz",
    "channel.vehicle_antenna.*",
    "channel.bs_antenna.*",
    "channel.vehicle_noise_figure_db",
    "channel.bs_noise_figure_db",
    "channel.satellite_noise_figure_db",
    "channel.satellite_tx_power_dbm",
    "channel.satellite_antenna_gain_dbi",
    "channel.terrestrial_subchannels",
    "channel.terrestrial_bandwidth_hz",
    "channel.satellite_subchannels",
    "channel.satellite_bandwidth_hz",
    "channel.satellite_pathloss.extra_loss_db",
    "channel.payload_bytes",
    "channel.max_transmission_delay_ms",
    "connectivity.powers.*",
    "blockchain.n_miners",
    "blockchain.block_interval_s",
    "blockchain.receive_time_s",
    "blockchain.gas_limit",
];

/// `"paper"` or `"decision"` for a dotted key path.
pub fn provenance(path: &str) -> &'static str {
    let segs: Vec<&str> = path.split('.').collect();
    let hit = PAPER_KEYS.iter().any(|pat| {
        let p: Vec<&str> = pat.split('.').collect();
        p.len() == segs.len() && p.iter().zip(&segs).all(|(a, b)| *a == "*" || a == b)
    });
    if hit {
        "paper"
    } else {
        "decision"
    }
}

fn is_table_array(v: &Value) -> bool {
    matches!(v, Value::Array(a) if !a.is_empty() && a.iter().all(Value::is_object))
}

fn render(v: &Value) -> String {
    match v {
        Value::Number(n) if n.is_f64() => {
            let f = n.as_f64().unwrap_or_default();
            let s = format!("{f:?}");
            if s.contains(['.', 'e', 'E']) || s.contains("inf") || s.contains("NaN") {
                s
            } else {
                format!("{s}.0")
            }
        }
        Value::Array(a) => format!("[{}]", a.iter().map(render).collect::<Vec<_>>().join(", ")),
        other => other.to_string(),
    }
}

fn emit_table(out: &mut String, prefix: &str, map: &Map<String, Value>) {
    let join = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
    for (k, v) in map {
        if v.is_null() || v.is_object() || is_table_array(v) {
            continue;
        }
        out.push_str(&format!("{k} = {}  # {}\n", render(v), provenance(&join(k))));
    }
    for (k, v) in map {
        if let Value::Object(child) = v {
            let path = join(k);
            out.push_str(&format!("\n[{path}]\n"));
            emit_table(out, &path, child);
        }
    }
    for (k, v) in map {
        if let (true, Value::Array(items)) = (is_table_array(v), v) {
            let path = join(k);
            for item in items {
                out.push_str(&format!("\n[[{path}]]\n"));
                if let Value::Object(child) = item {
                    emit_table(out, &path, child);
                }
            }
        }
    }
}
