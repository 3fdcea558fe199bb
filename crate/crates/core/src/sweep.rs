//! Parameter sweeps: the cross product of axis values, seeds and strategies,
//! each cell an independent run. Cells may run on a worker pool; results are
//! always reported in cell order, so output does not depend on `jobs`.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::config::{ConfigError, FieldError, ScenarioConfig, TraceSource};
use crate::metrics::{aggregate, write_aggregate_csv, write_csv, AggregateRow, MetricsError, RunMetrics, SweepAxis};
use crate::sim::{run, RunOptions};

pub const DEFAULT_STRATEGIES: [&str; 3] = ["random", "max_sinr", "enhanced_max_sinr"];

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("sweep needs at least one {0}")]
    Empty(&'static str),
    #[error("worker pool: {0}")]
    Pool(String),
    #[error("{path}: {msg}")]
    Io { path: PathBuf, msg: String },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub seeds: Vec<u64>,
    pub strategies: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub value: f64,
    pub seed: u64,
    pub strategy: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellFailure {
    pub cell: Cell,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub runs: Vec<RunMetrics>,
    pub failures: Vec<CellFailure>,
    pub aggregate: Vec<AggregateRow>,
}

impl SweepSpec {
    /// Cells ordered by value, then seed, then strategy.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::with_capacity(self.values.len() * self.seeds.len() * self.strategies.len());
        for &value in &self.values {
            for &seed in &self.seeds {
                for s in &self.strategies {
                    out.push(Cell { value, seed, strategy: s.clone() });
                }
            }
        }
        out
    }
}

/// The base config with one cell's overrides applied and validated.
pub fn cell_config(base: &ScenarioConfig, axis: SweepAxis, cell: &Cell) -> Result<ScenarioConfig, ConfigError> {
    let mut cfg = base.clone();
    cfg.seed = cell.seed;
    cfg.connectivity.strategy = cell.strategy.clone();
    match axis {
        SweepAxis::NVehicles => {
            let field = "traffic.n_vehicles";
            if base.traffic.source != TraceSource::Synthetic {
                return Err(ConfigError::Validation(vec![FieldError::new(field, "vehicle sweeps need synthetic traffic")]));
            }
            if cell.value.fract() != 0.0 || cell.value < 0.0 {
                return Err(ConfigError::Validation(vec![FieldError::new(field, format!("{} is not a vehicle count", cell.value))]));
            }
            cfg.traffic.n_vehicles = cell.value as usize;
        }
        SweepAxis::BlockInterval => cfg.blockchain.block_interval_s = cell.value,
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_cell(base: &ScenarioConfig, axis: SweepAxis, cell: &Cell) -> Result<RunMetrics, String> {
    let cfg = cell_config(base, axis, cell).map_err(|e| e.to_string())?;
    log::info!("cell {}={} seed {} {}", axis.name(), cell.value, cell.seed, cell.strategy);
    run(&cfg, &RunOptions::default()).map(|o| o.metrics).map_err(|e| e.to_string())
}

/// Runs every cell on `jobs` worker threads. Failed cells are listed, the
/// rest are kept.
pub fn run_sweep(base: &ScenarioConfig, spec: &SweepSpec, jobs: usize) -> Result<SweepResult, SweepError> {
    if spec.values.is_empty() {
        return Err(SweepError::Empty("value"));
    }
    if spec.seeds.is_empty() {
        return Err(SweepError::Empty("seed"));
    }
    if spec.strategies.is_empty() {
        return Err(SweepError::Empty("strategy"));
    }
    let cells = spec.cells();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build().map_err(|e| SweepError::Pool(e.to_string()))?;
    let outcomes: Vec<Result<RunMetrics, String>> = pool.install(|| cells.par_iter().map(|c| run_cell(base, spec.axis, c)).collect());

    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (cell, outcome) in cells.into_iter().zip(outcomes) {
        match outcome {
            Ok(m) => runs.push(m),
            Err(error) => {
                log::warn!("cell {}={} seed {} {} failed: {error}", spec.axis.name(), cell.value, cell.seed, cell.strategy);
                failures.push(CellFailure { cell, error });
            }
        }
    }
    let aggregate = aggregate(spec.axis, &runs);
    Ok(SweepResult { axis: spec.axis, runs, failures, aggregate })
}

fn create(path: &Path) -> Result<BufWriter<File>, SweepError> {
    File::create(path).map(BufWriter::new).map_err(|e| SweepError::Io { path: path.to_path_buf(), msg: e.to_string() })
}

impl SweepResult {
    /// Writes `runs.csv`, `aggregate.csv` and, when any cell failed,
    /// `failures.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), SweepError> {
        std::fs::create_dir_all(dir).map_err(|e| SweepError::Io { path: dir.to_path_buf(), msg: e.to_string() })?;
        write_csv(&self.runs, create(&dir.join("runs.csv"))?)?;
        write_aggregate_csv(&self.aggregate, create(&dir.join("aggregate.csv"))?)?;
        let path = dir.join("failures.csv");
        if self.failures.is_empty() {
            if path.exists() {
                std::fs::remove_file(&path).map_err(|e| SweepError::Io { path: path.clone(), msg: e.to_string() })?;
            }
            return Ok(());
        }
        let mut w = csv::Writer::from_writer(create(&path)?);
        let err = |e: csv::Error| SweepError::Io { path: path.clone(), msg: e.to_string() };
        w.write_record(["value", "seed", "strategy", "error"]).map_err(err)?;
        for f in &self.failures {
            let c = &f.cell;
            w.write_record([c.value.to_string(), c.seed.to_string(), c.strategy.clone(), f.error.clone()]).map_err(err)?;
        }
        w.flush().map_err(|e| SweepError::Io { path, msg: e.to_string() })
    }
}
