//! Command-line front end: `simulate`, `sweep` and `validate`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::config::{load_scenario, ConfigError, ScenarioConfig};
use crate::connectivity::write_occupancy_csv;
use crate::metrics::{export_metrics, ExportFormat, SweepAxis};
use crate::sim::{run, RunOptions, RunOutput, SimError};
use crate::sweep::{run_sweep, SweepSpec, DEFAULT_STRATEGIES};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_PARTIAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "siov-sim", version, about = "Blockchain-backed V2X network simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one scenario.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        strategy: Option<String>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Newline-delimited JSON of every processed event.
        #[arg(long)]
        event_log: Option<PathBuf>,
        /// JSON array of every mined block.
        #[arg(long)]
        chain_dump: Option<PathBuf>,
        /// Per-round channel occupancy CSV.
        #[arg(long)]
        occupancy: Option<PathBuf>,
        /// Worker threads. A single run is sequential, so this only matters
        /// for sweeps.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Run the cross product of axis values, seeds and strategies.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// `n_vehicles` or `block_interval`.
        #[arg(long)]
        axis: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        #[arg(long, value_delimiter = ',')]
        strategies: Option<Vec<String>>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Check a config and print the effective settings.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Debug)]
struct Failure {
    code: i32,
    msg: String,
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure { code: EXIT_VALIDATION, msg: e.to_string() }
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        let code = if matches!(e, SimError::Config(_)) { EXIT_VALIDATION } else { EXIT_RUNTIME };
        Failure { code, msg: e.to_string() }
    }
}

fn runtime(msg: impl Into<String>) -> Failure {
    Failure { code: EXIT_RUNTIME, msg: msg.into() }
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<(), String>) -> Result<(), Failure> {
    let mut w = create(path)?;
    f(&mut w).and_then(|_| w.flush().map_err(|e| e.to_string())).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

/// Files written by `simulate`.
pub struct SimulateOutputs<'a> {
    pub out: &'a Path,
    pub event_log: Option<&'a Path>,
    pub chain_dump: Option<&'a Path>,
    pub occupancy: Option<&'a Path>,
}

fn write_outputs(cfg: &ScenarioConfig, res: &RunOutput, o: &SimulateOutputs<'_>) -> Result<(), Failure> {
    std::fs::create_dir_all(o.out).map_err(|e| runtime(format!("{}: {e}", o.out.display())))?;
    let csv = o.out.join("metrics.csv");
    export_metrics(&res.metrics, ExportFormat::Csv, &csv).map_err(|e| runtime(e.to_string()))?;
    export_metrics(&res.metrics, ExportFormat::Json, &o.out.join("metrics.json")).map_err(|e| runtime(e.to_string()))?;
    write_with(&o.out.join("effective_config.toml"), |w| w.write_all(cfg.effective_toml().as_bytes()).map_err(|e| e.to_string()))?;
    write_with(&o.out.join("fork_report.csv"), |w| res.ledger.write_fork_report(w).map_err(|e| e.to_string()))?;
    if let Some(p) = o.event_log {
        write_with(p, |w| res.log.write_ndjson(w).map_err(|e| e.to_string()))?;
    }
    if let Some(p) = o.chain_dump {
        write_with(p, |w| res.ledger.write_chain_dump(w).map_err(|e| e.to_string()))?;
    }
    if let Some(p) = o.occupancy {
        write_with(p, |w| write_occupancy_csv(&res.occupancy, w).map_err(|e| e.to_string()))?;
    }
    Ok(())
}

fn simulate(config: &Path, seed: Option<u64>, strategy: Option<String>, outputs: &SimulateOutputs<'_>) -> Result<(), Failure> {
    let mut cfg = load_scenario(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(s) = strategy {
        cfg.connectivity.strategy = s;
    }
    cfg.validate()?;
    let opts = RunOptions { record_log: outputs.event_log.is_some(), record_occupancy: outputs.occupancy.is_some(), check_integrity: false };
    let res = run(&cfg, &opts)?;
    write_outputs(&cfg, &res, outputs)?;
    let m = &res.metrics;
    println!(
        "{} seed {}: delivered {}/{} messages, {:.4} M/ms, {:.2} TX/s, {} blocks ({} discarded)",
        m.strategy, m.seed, m.msgs_delivered, m.msgs_generated, m.message_throughput_m_per_ms, m.tx_throughput_per_s, m.blocks_mined, m.blocks_discarded
    );
    Ok(())
}

fn sweep(config: &Path, spec: &SweepSpec, out: &Path, jobs: usize) -> Result<i32, Failure> {
    let cfg = load_scenario(config)?;
    let res = run_sweep(&cfg, spec, jobs).map_err(|e| Failure { code: EXIT_VALIDATION, msg: e.to_string() })?;
    res.write(out).map_err(|e| runtime(e.to_string()))?;
    write_with(&out.join("effective_config.toml"), |w| w.write_all(cfg.effective_toml().as_bytes()).map_err(|e| e.to_string()))?;
    println!("{} runs, {} failed cells, results in {}", res.runs.len(), res.failures.len(), out.display());
    for f in &res.failures {
        eprintln!("failed: {}={} seed {} {}: {}", spec.axis.name(), f.cell.value, f.cell.seed, f.cell.strategy, f.error);
    }
    Ok(match (res.failures.is_empty(), res.runs.is_empty()) {
        (true, _) => EXIT_OK,
        (false, false) => EXIT_PARTIAL,
        (false, true) => EXIT_RUNTIME,
    })
}

/// Runs one parsed command and returns the process exit code.
pub fn execute(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Simulate { config, seed, strategy, out, event_log, chain_dump, occupancy, jobs: _ } => {
            let outputs = SimulateOutputs { out: &out, event_log: event_log.as_deref(), chain_dump: chain_dump.as_deref(), occupancy: occupancy.as_deref() };
            simulate(&config, seed, strategy, &outputs).map(|_| EXIT_OK)
        }
        Command::Sweep { config, axis, values, seeds, strategies, out, jobs } => match axis.parse::<SweepAxis>() {
            Ok(axis) => {
                let strategies = strategies.unwrap_or_else(|| DEFAULT_STRATEGIES.iter().map(|s| s.to_string()).collect());
                sweep(&config, &SweepSpec { axis, values, seeds, strategies }, &out, jobs)
            }
            Err(msg) => Err(Failure { code: EXIT_VALIDATION, msg }),
        },
        Command::Validate { config } => load_scenario(&config).map(|cfg| {
            print!("{}", cfg.effective_toml());
            EXIT_OK
        }).map_err(Failure::from),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            f.code
        }
    }
}

/// Entry point for the binary: sets up `SIM_LOG` logging and parses
/// arguments. Usage errors exit with the validation code.
pub fn main_from_env() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SIM_LOG", "warn")).init();
    match Cli::try_parse() {
        Ok(cli) => execute(cli),
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
            let _ = e.print();
            code
        }
    }
}
