//! Headline metrics, export, across-seed aggregation and an independent
//! recomputation from the event log.
//!
//! Message throughput is `ME / Σ L_M` with latencies in milliseconds, i.e.
//! delivered messages per millisecond of cumulative latency. Transaction
//! throughput is canonical-chain transactions per simulated second.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::EventLog;
use crate::sim::EventPayload;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("{delivered} messages delivered with zero total latency")]
    ZeroLatency { delivered: u64 },
    #[error("{path}: {msg}")]
    Io { path: PathBuf, msg: String },
    #[error("csv: {0}")]
    Csv(String),
}

pub fn message_throughput(delivered: u64, total_latency_ms: f64) -> Result<f64, MetricsError> {
    if delivered == 0 {
        return Ok(0.0);
    }
    if total_latency_ms <= 0.0 {
        return Err(MetricsError::ZeroLatency { delivered });
    }
    Ok(delivered as f64 / total_latency_ms)
}

pub fn transaction_throughput(canonical_tx: u64, sim_time_s: f64) -> f64 {
    canonical_tx as f64 / sim_time_s
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModeStats {
    pub attempts: u64,
    pub failures: u64,
    pub delivered: u64,
    pub sum_latency_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub retry_exhausted: u64,
    pub expired: u64,
    pub no_feasible_action: u64,
    pub departed: u64,
    pub incomplete: u64,
}

impl LossBreakdown {
    pub fn total(&self) -> u64 {
        self.retry_exhausted + self.expired + self.no_feasible_action + self.departed + self.incomplete
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub scenario: String,
    pub strategy: String,
    pub seed: u64,
    pub n_vehicles: usize,
    pub block_interval_s: f64,
    pub msgs_generated: u64,
    pub msgs_delivered: u64,
    pub msgs_lost: u64,
    pub sum_latency_ms: f64,
    pub message_throughput_m_per_ms: f64,
    pub canonical_tx: u64,
    pub tx_throughput_per_s: f64,
    pub blocks_mined: u64,
    pub blocks_discarded: u64,
    #[serde(default)]
    pub per_mode: BTreeMap<String, ModeStats>,
    #[serde(default)]
    pub losses: LossBreakdown,
}

impl RunMetrics {
    pub fn discard_rate(&self) -> f64 {
        if self.blocks_mined == 0 {
            0.0
        } else {
            self.blocks_discarded as f64 / self.blocks_mined as f64
        }
    }
}

pub const CSV_COLUMNS: [&str; 14] = [
    "scenario",
    "strategy",
    "seed",
    "n_vehicles",
    "block_interval_s",
    "msgs_generated",
    "msgs_delivered",
    "msgs_lost",
    "sum_latency_ms",
    "message_throughput_m_per_ms",
    "canonical_tx",
    "tx_throughput_per_s",
    "blocks_mined",
    "blocks_discarded",
];

/// Flat CSV record; the nested breakdowns only go to JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub scenario: String,
    pub strategy: String,
    pub seed: u64,
    pub n_vehicles: usize,
    pub block_interval_s: f64,
    pub msgs_generated: u64,
    pub msgs_delivered: u64,
    pub msgs_lost: u64,
    pub sum_latency_ms: f64,
    pub message_throughput_m_per_ms: f64,
    pub canonical_tx: u64,
    pub tx_throughput_per_s: f64,
    pub blocks_mined: u64,
    pub blocks_discarded: u64,
}

impl From<&RunMetrics> for CsvRow {
    fn from(m: &RunMetrics) -> Self {
        CsvRow {
            scenario: m.scenario.clone(),
            strategy: m.strategy.clone(),
            seed: m.seed,
            n_vehicles: m.n_vehicles,
            block_interval_s: m.block_interval_s,
            msgs_generated: m.msgs_generated,
            msgs_delivered: m.msgs_delivered,
            msgs_lost: m.msgs_lost,
            sum_latency_ms: m.sum_latency_ms,
            message_throughput_m_per_ms: m.message_throughput_m_per_ms,
            canonical_tx: m.canonical_tx,
            tx_throughput_per_s: m.tx_throughput_per_s,
            blocks_mined: m.blocks_mined,
            blocks_discarded: m.blocks_discarded,
        }
    }
}

impl From<CsvRow> for RunMetrics {
    fn from(r: CsvRow) -> Self {
        RunMetrics {
            scenario: r.scenario,
            strategy: r.strategy,
            seed: r.seed,
            n_vehicles: r.n_vehicles,
            block_interval_s: r.block_interval_s,
            msgs_generated: r.msgs_generated,
            msgs_delivered: r.msgs_delivered,
            msgs_lost: r.msgs_lost,
            sum_latency_ms: r.sum_latency_ms,
            message_throughput_m_per_ms: r.message_throughput_m_per_ms,
            canonical_tx: r.canonical_tx,
            tx_throughput_per_s: r.tx_throughput_per_s,
            blocks_mined: r.blocks_mined,
            blocks_discarded: r.blocks_discarded,
            ..RunMetrics::default()
        }
    }
}

pub fn write_csv<W: Write>(rows: &[RunMetrics], out: W) -> Result<(), MetricsError> {
    // header written by hand so an empty table still has one
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_COLUMNS).map_err(|e| MetricsError::Csv(e.to_string()))?;
    for r in rows {
        w.serialize(CsvRow::from(r)).map_err(|e| MetricsError::Csv(e.to_string()))?;
    }
    w.flush().map_err(|e| MetricsError::Csv(e.to_string()))
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<RunMetrics>, MetricsError> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers().map_err(|e| MetricsError::Csv(e.to_string()))?;
    if header.iter().collect::<Vec<_>>() != CSV_COLUMNS {
        return Err(MetricsError::Csv(format!("unexpected header `{}`", header.iter().collect::<Vec<_>>().join(","))));
    }
    rdr.deserialize::<CsvRow>()
        .map(|r| r.map(RunMetrics::from).map_err(|e| MetricsError::Csv(e.to_string())))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Json,
}

/// Writes one run to `path`, overwriting any previous file.
pub fn export_metrics(m: &RunMetrics, format: ExportFormat, path: &Path) -> Result<(), MetricsError> {
    let io = |e: std::io::Error| MetricsError::Io { path: path.to_owned(), msg: e.to_string() };
    let file = std::fs::File::create(path).map_err(io)?;
    let mut out = std::io::BufWriter::new(file);
    match format {
        ExportFormat::Csv => write_csv(std::slice::from_ref(m), &mut out)?,
        ExportFormat::Json => {
            serde_json::to_writer_pretty(&mut out, m).map_err(|e| MetricsError::Io { path: path.to_owned(), msg: e.to_string() })?;
            out.write_all(b"\n").map_err(io)?;
        }
    }
    out.flush().map_err(io)
}

/// Two-sided 97.5% Student-t quantile.
pub fn t_critical_975(df: usize) -> f64 {
    const TABLE: [f64; 30] = [
        12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228, 2.201, 2.179, 2.160, 2.145, 2.131, 2.120,
        2.110, 2.101, 2.093, 2.086, 2.080, 2.074, 2.069, 2.064, 2.060, 2.056, 2.052, 2.048, 2.045, 2.042,
    ];
    match df {
        0 => f64::NAN,
        1..=30 => TABLE[df - 1],
        31..=60 => 2.000,
        61..=120 => 1.980,
        _ => 1.960,
    }
}

/// Mean and 95% confidence half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub ci95: f64,
}

pub fn summarize(values: &[f64]) -> Summary {
    let n = values.len();
    if n == 0 {
        return Summary { n, mean: f64::NAN, ci95: f64::NAN };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return Summary { n, mean, ci95: 0.0 };
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Summary { n, mean, ci95: t_critical_975(n - 1) * (var / n as f64).sqrt() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    NVehicles,
    BlockInterval,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::NVehicles => "n_vehicles",
            SweepAxis::BlockInterval => "block_interval",
        }
    }

    /// The axis value as recorded in a run's metrics.
    pub fn value_of(self, m: &RunMetrics) -> String {
        match self {
            SweepAxis::NVehicles => m.n_vehicles.to_string(),
            SweepAxis::BlockInterval => m.block_interval_s.to_string(),
        }
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "n_vehicles" | "vehicles" => Ok(SweepAxis::NVehicles),
            "block_interval" | "block_interval_s" => Ok(SweepAxis::BlockInterval),
            other => Err(format!("unknown sweep axis `{other}` (expected n_vehicles or block_interval)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub axis: String,
    pub value: String,
    pub strategy: String,
    pub runs: usize,
    pub msgs_delivered: Summary,
    pub message_throughput: Summary,
    pub tx_throughput: Summary,
    pub discard_rate: Summary,
}

/// Groups runs by `(axis value, strategy)` in first-seen order.
pub fn aggregate(axis: SweepAxis, runs: &[RunMetrics]) -> Vec<AggregateRow> {
    let mut order: Vec<(String, String)> = Vec::new();
    let mut groups: HashMap<(String, String), Vec<&RunMetrics>> = HashMap::new();
    for m in runs {
        let key = (axis.value_of(m), m.strategy.clone());
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(m);
    }
    order
        .into_iter()
        .map(|key| {
            let g = &groups[&key];
            let col = |f: fn(&RunMetrics) -> f64| summarize(&g.iter().map(|m| f(m)).collect::<Vec<_>>());
            AggregateRow {
                axis: axis.name().to_string(),
                value: key.0,
                strategy: key.1,
                runs: g.len(),
                msgs_delivered: col(|m| m.msgs_delivered as f64),
                message_throughput: col(|m| m.message_throughput_m_per_ms),
                tx_throughput: col(|m| m.tx_throughput_per_s),
                discard_rate: col(RunMetrics::discard_rate),
            }
        })
        .collect()
}

pub fn write_aggregate_csv<W: Write>(rows: &[AggregateRow], out: W) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| MetricsError::Csv(e.to_string());
    w.write_record([
        "axis",
        "value",
        "strategy",
        "runs",
        "msgs_delivered_mean",
        "msgs_delivered_ci95",
        "message_throughput_mean",
        "message_throughput_ci95",
        "tx_throughput_mean",
        "tx_throughput_ci95",
        "discard_rate_mean",
        "discard_rate_ci95",
    ])
    .map_err(err)?;
    for r in rows {
        let mut rec = vec![r.axis.clone(), r.value.clone(), r.strategy.clone(), r.runs.to_string()];
        for s in [r.msgs_delivered, r.message_throughput, r.tx_throughput, r.discard_rate] {
            rec.push(s.mean.to_string());
            rec.push(s.ci95.to_string());
        }
        w.write_record(&rec).map_err(err)?;
    }
    w.flush().map_err(|e| MetricsError::Csv(e.to_string()))
}

/// Totals rebuilt from the event log alone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogTotals {
    pub delivered: u64,
    pub sum_latency_ms: f64,
    pub canonical_tx: u64,
    pub blocks_mined: u64,
}

/// Replays arrivals and block events: every validated arrival adds its
/// latency; chains are rebuilt from block wins and accepted receptions and
/// the longest one (earliest tip, then lowest miner on ties) is summed.
pub fn fold_event_log(log: &EventLog<EventPayload>) -> LogTotals {
    struct B {
        parent: Option<u64>,
        height: u64,
        txs: u64,
        created_us: u64,
        miner: u32,
    }
    let mut delivered = 0u64;
    let mut latency_us = 0u64;
    let mut blocks: HashMap<u64, B> = HashMap::new();
    let mut tips: HashMap<u32, u64> = HashMap::new();
    for rec in &log.records {
        match &rec.payload {
            EventPayload::Arrival { latency_us: l, tx_id: Some(_), .. } => {
                delivered += 1;
                latency_us += l;
            }
            EventPayload::BlockWon { miner, block_id: Some(id), parent_id, height, tx_count } => {
                blocks.insert(*id, B { parent: *parent_id, height: *height, txs: *tx_count, created_us: rec.time_us, miner: *miner });
                tips.insert(*miner, *id);
            }
            EventPayload::BlockReceived { node, block_id, accepted: Some(true) } => {
                tips.insert(*node, *block_id);
            }
            _ => {}
        }
    }
    let best = tips.values().filter_map(|id| blocks.get(id).map(|b| (id, b))).min_by(|(_, a), (_, b)| {
        b.height.cmp(&a.height).then(a.created_us.cmp(&b.created_us)).then(a.miner.cmp(&b.miner))
    });
    let mut canonical_tx = 0;
    let mut cur = best.map(|(id, _)| *id);
    while let Some(id) = cur {
        let Some(b) = blocks.get(&id) else { break };
        canonical_tx += b.txs;
        cur = b.parent;
    }
    LogTotals { delivered, sum_latency_ms: latency_us as f64 / 1000.0, canonical_tx, blocks_mined: blocks.len() as u64 }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> RunMetrics {
        let mut per_mode = BTreeMap::new();
        per_mode.insert("V2I".to_string(), ModeStats { attempts: 10, failures: 1, delivered: 9, sum_latency_ms: 7.25 });
        RunMetrics {
            scenario: "default".into(),
            strategy: "enhanced_max_sinr".into(),
            seed: 7,
            n_vehicles: 100,
            block_interval_s: 2.7,
            msgs_generated: 10_000,
            msgs_delivered: 9_900,
            msgs_lost: 80,
            sum_latency_ms: 7_921.123,
            message_throughput_m_per_ms: 9_900.0 / 7_921.123,
            canonical_tx: 9_000,
            tx_throughput_per_s: 180.0,
            blocks_mined: 19,
            blocks_discarded: 2,
            per_mode,
            losses: LossBreakdown { retry_exhausted: 80, ..LossBreakdown::default() },
        }
    }

    #[test]
    fn throughput_examples() {
        assert_eq!(message_throughput(1000, 8.0).unwrap(), 125.0);
        assert_eq!(message_throughput(0, 0.0).unwrap(), 0.0);
        assert!(matches!(message_throughput(5, 0.0), Err(MetricsError::ZeroLatency { delivered: 5 })));
        let base = message_throughput(321, 17.5).unwrap();
        assert!((message_throughput(321, 35.0).unwrap() - base / 2.0).abs() < 1e-12);
        assert!((transaction_throughput(13214, 50.0) - 264.28).abs() < 1e-9);
        assert_eq!(transaction_throughput(0, 50.0), 0.0);
    }

    #[test]
    fn csv_round_trip() {
        let m = sample();
        let mut buf = Vec::new();
        write_csv(&[m.clone(), m.clone()], &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(&(CSV_COLUMNS.join(",") + "\n")));
        let back = read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(CsvRow::from(&back[0]), CsvRow::from(&m));
    }

    #[test]
    fn json_keys_match_schema() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        export_metrics(&sample(), ExportFormat::Json, &path).unwrap();
        let first = std::fs::read(&path).unwrap();
        export_metrics(&sample(), ExportFormat::Json, &path).unwrap();
        assert_eq!(first, std::fs::read(&path).unwrap());
        let v: serde_json::Value = serde_json::from_slice(&first).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(|k| k.as_str()).collect();
        let mut expected: Vec<&str> = CSV_COLUMNS.to_vec();
        expected.extend(["per_mode", "losses"]);
        let mut k = keys.clone();
        k.sort();
        expected.sort();
        assert_eq!(k, expected);
        assert_eq!(v["per_mode"]["V2I"]["delivered"], 9);
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let r = export_metrics(&sample(), ExportFormat::Csv, Path::new("/nonexistent-dir/x/m.csv"));
        assert!(matches!(r, Err(MetricsError::Io { .. })));
    }

    #[test]
    fn summary_matches_hand_values() {
        let s = summarize(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        // sd = 1.29099, se = 0.645497, t(3) = 3.182
        assert!((s.ci95 - 3.182 * 0.645_497).abs() < 1e-5);
        assert_eq!(summarize(&[5.0]).ci95, 0.0);
    }

    #[test]
    fn aggregate_groups_in_order() {
        let mut a = sample();
        let mut b = sample();
        b.seed = 8;
        b.msgs_delivered = 9_700;
        let mut c = sample();
        c.strategy = "random".into();
        a.n_vehicles = 100;
        let rows = aggregate(SweepAxis::NVehicles, &[a, b, c]);
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].runs, 2);
        assert_eq!(rows[0].msgs_delivered.mean, 9_800.0);
        assert_eq!(rows[1].strategy, "random");
        let mut buf = Vec::new();
        write_aggregate_csv(&rows, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 3);
    }
}
