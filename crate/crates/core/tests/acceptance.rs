//! Exit criteria. Every criterion prints one `PASS`/`FAIL` line; the target
//! fails if any criterion does.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF, Exp};

use siov_sim::blockchain::{broadcast_delays, run_consensus_round, sample_block_time, BlockchainConfig, KeyMessage, Ledger, Validation};
use siov_sim::channel::{link_outcome, noise_power_dbm, shannon_rate, sinr, LinkLimits, SubChannel};
use siov_sim::config::{load_scenario, ScenarioConfig};
use siov_sim::connectivity::{select_enhanced, select_enhanced_case, AttemptContext, Candidate, EnhancedBranch, LinkAction, Mode, Outcome};
use siov_sim::engine::SimTime;
use siov_sim::metrics::{write_csv, RunMetrics, SweepAxis};
use siov_sim::mobility::{parse_csv_trace, parse_fcd_trace, place_rsus, write_csv_trace, write_fcd_trace, RegionSpec, RsuId, RsuNode, RsuRole};
use siov_sim::satellite::{parse_tle_file, TleError};
use siov_sim::sim::{run, run_chain_only, RunOptions};
use siov_sim::sweep::{run_sweep, SweepSpec};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn report(n: u32, title: &str, pass: bool, detail: String) {
    println!("criterion {n:>2} {:<4} {title}: {detail}", if pass { "PASS" } else { "FAIL" });
}

fn jobs() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// One-sample Kolmogorov-Smirnov statistic.
fn ks_statistic(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    samples.iter().enumerate().fold(0.0f64, |d, (i, &x)| {
        let f = cdf(x);
        d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n)
    })
}

/// Asymptotic KS critical value `sqrt(-ln(alpha/2) / 2) / sqrt(n)`.
fn ks_critical(alpha: f64, n: usize) -> f64 {
    (-(alpha / 2.0).ln() / 2.0).sqrt() / (n as f64).sqrt()
}

fn c01_race_winner_frequencies_follow_hash_share() -> bool {
    let start = Instant::now();
    let shares = [0.5, 0.3, 0.2];
    let t_g = 2.7;
    // min of independent exponentials: P(i first) = rate_i / sum(rates)
    let rates: Vec<f64> = shares.iter().map(|s| s / t_g).collect();
    let total: f64 = rates.iter().sum();
    let expected: Vec<f64> = rates.iter().map(|r| r / total).collect();

    let races = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE_0001);
    let mut wins = [0u64; 3];
    for _ in 0..races {
        wins[run_consensus_round(&shares, t_g, &mut rng).unwrap().winner] += 1;
    }
    let chi2: f64 = wins.iter().zip(&expected).map(|(&o, &p)| (o as f64 - races as f64 * p).powi(2) / (races as f64 * p)).sum();
    let critical = ChiSquared::new(2.0).unwrap().inverse_cdf(0.99);
    let elapsed = start.elapsed();
    let pass = chi2 < critical && elapsed < Duration::from_secs(5);
    report(1, "consensus race fairness", pass, format!("wins {wins:?}, chi2 {chi2:.3} < {critical:.3}, {elapsed:.2?}"));
    pass
}

fn c02_single_miner_block_times_are_exponential() -> bool {
    let start = Instant::now();
    let t_g = 2.7;
    let n = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE_0002);
    let mut samples: Vec<f64> = (0..n).map(|_| sample_block_time(1.0, t_g, &mut rng).unwrap()).collect();
    let mean = samples.iter().sum::<f64>() / n as f64;
    let exp = Exp::new(1.0 / t_g).unwrap();
    let d = ks_statistic(&mut samples, |x| exp.cdf(x));
    let critical = ks_critical(0.01, n);
    let elapsed = start.elapsed();
    let pass = (2.65..=2.75).contains(&mean) && d < critical && elapsed < Duration::from_secs(5);
    report(2, "block timing", pass, format!("mean {mean:.4} s in [2.65, 2.75], KS D {d:.5} < {critical:.5}, {elapsed:.2?}"));
    pass
}

fn c03_broadcast_delay_mean() -> bool {
    let n = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE_0003);
    let mut delays = Vec::with_capacity(n);
    let mut sender = 0;
    while delays.len() < n {
        for (_, d) in broadcast_delays(54, sender, 0.25, &mut rng).unwrap() {
            if delays.len() < n {
                delays.push(d);
            }
        }
        sender = (sender + 1) % 54;
    }
    let mean = delays.iter().sum::<f64>() / n as f64;
    let pass = (0.245..=0.255).contains(&mean);
    report(3, "broadcast timing", pass, format!("mean {mean:.5} s in [0.245, 0.255]"));
    pass
}

fn c04_saturated_pool_reaches_gas_ceiling() -> bool {
    let start = Instant::now();
    let defaults = BlockchainConfig::default();
    assert_eq!((defaults.gas_per_tx, defaults.gas_limit, defaults.block_interval_s), (21_000, 30_000_000, 2.7));
    // 30e6 / 21e3 = 1428.57, so 1428 transactions fit in a block
    let per_block = (30_000_000 / 21_000) as f64;
    let ceiling = per_block / 2.7;
    assert!((ceiling - 529.0).abs() < 0.5);

    // One miner, so every block is canonical. Block counts over 500 s are
    // Poisson with a 7% spread, so the figure is the mean of independent runs.
    let sim_time = 500.0;
    let runs = 20;
    let preload = (2.0 * ceiling * sim_time) as u64;
    let solo = BlockchainConfig { n_miners: 1, ..defaults.clone() };
    let rsus = place_rsus(&RegionSpec::default(), 1).unwrap();
    let measured = (1..=runs).map(|seed| run_chain_only(&solo, &rsus, preload, sim_time, seed, false).unwrap().tx_throughput_per_s).sum::<f64>()
        / runs as f64;

    let full = place_rsus(&RegionSpec::default(), defaults.n_miners).unwrap();
    let with_forks = run_chain_only(&defaults, &full, preload, sim_time, 1, false).unwrap().tx_throughput_per_s;

    let rel = (measured - 529.0).abs() / 529.0;
    let elapsed = start.elapsed();
    let pass = rel <= 0.05 && elapsed < Duration::from_secs(30);
    report(
        4,
        "throughput ceiling",
        pass,
        format!(
            "{measured:.1} TX/s (mean of {runs} runs) vs 529.0, ceiling {ceiling:.2}, off by {:.2}%; {} miners with forks: {with_forks:.1} TX/s; {elapsed:.2?}",
            rel * 100.0,
            defaults.n_miners
        ),
    );
    pass
}

fn rsu(id: u32, role: RsuRole) -> RsuNode {
    RsuNode { rsu_id: RsuId(id), x: id as f64 * 500.0, y: 0.0, coverage_radius: 500.0, role, zone: 0 }
}

fn key_message(i: u64, at: f64) -> KeyMessage {
    KeyMessage { msg_id: i, vehicle_id: format!("veh{i}"), speed: 10.0, x: 0.0, y: 0.0, generated_at: SimTime::from_secs_f64(at), complete: true }
}

fn c05_fork_resolution_drops_losing_branch() -> bool {
    let config = BlockchainConfig { gas_limit: 2 * 21_000, ..BlockchainConfig::default() };
    let rsus = [rsu(0, RsuRole::Miner), rsu(1, RsuRole::Miner), rsu(2, RsuRole::Regular)];
    let mut l = Ledger::new(config, &rsus, &[1.0, 1.0]);
    let mut integrity = Vec::new();
    let mut check = |l: &Ledger| integrity.push(l.check_integrity().is_ok());

    l.verify_and_enqueue(&key_message(0, 0.1), RsuId(2), SimTime::from_secs_f64(0.2)).unwrap();
    check(&l);
    let a = l.package_block(0, SimTime::from_secs_f64(1.0));
    check(&l);
    l.verify_and_enqueue(&key_message(1, 1.01), RsuId(2), SimTime::from_secs_f64(1.02)).unwrap();
    check(&l);
    // miner 1 has not seen `a` yet and builds on genesis too
    let b = l.package_block(1, SimTime::from_secs_f64(1.05));
    check(&l);
    let deliveries = [(2, a, Validation::Accepted), (2, b, Validation::Discarded), (1, a, Validation::Discarded), (0, b, Validation::Discarded)];
    let mut validations_ok = true;
    for (node, block, want) in deliveries {
        validations_ok &= l.validate_and_append(node, block) == want;
        check(&l);
    }

    let canonical = l.resolve_longest_chain();
    let on_a = canonical.blocks.contains(&a);
    let on_b = canonical.blocks.contains(&b);
    let exclusive: Vec<u64> =
        l.blocks[b as usize].transactions.iter().copied().filter(|t| !l.blocks[a as usize].transactions.contains(t)).collect();
    let absent = !exclusive.is_empty() && exclusive.iter().all(|t| !canonical.tx_ids.contains(t));
    let every_event = integrity.iter().all(|&ok| ok);
    let full_run = full_run_integrity();
    let full_run_ok = full_run.as_ref().is_ok_and(|&mined| mined > 0);
    let pass = full_run_ok && validations_ok && (on_a ^ on_b) && on_a && absent && canonical.tx_count() == 1 && l.blocks_discarded(&canonical) == 1 && every_event;
    report(
        5,
        "fork semantics",
        pass,
        format!(
            "canonical {:?}, losing-branch txs {exclusive:?} absent: {absent}, sum TX {}, integrity at {}/{} fixture events, full run checked at every event: {full_run:?}",
            canonical.blocks,
            canonical.tx_count(),
            integrity.iter().filter(|&&ok| ok).count(),
            integrity.len()
        ),
    );
    pass
}

/// A small scenario with the integrity check after every event; returns the
/// number of blocks mined.
fn full_run_integrity() -> Result<u64, String> {
    let cfg = load_scenario(&fixture("small.toml")).map_err(|e| e.to_string())?;
    let out = run(&cfg, &RunOptions { check_integrity: true, ..RunOptions::default() }).map_err(|e| e.to_string())?;
    Ok(out.metrics.blocks_mined)
}

fn congested_base() -> ScenarioConfig {
    let cfg = ScenarioConfig::default();
    assert_eq!(cfg.traffic.n_vehicles, 300);
    cfg
}

fn c06_forks_grow_as_block_interval_shrinks() -> bool {
    let start = Instant::now();
    let intervals = vec![0.5, 1.0, 2.0, 2.7, 4.0];
    let spec = SweepSpec {
        axis: SweepAxis::BlockInterval,
        values: intervals.clone(),
        seeds: (1..=10).collect(),
        strategies: vec!["enhanced_max_sinr".into()],
    };
    let res = run_sweep(&congested_base(), &spec, jobs()).unwrap();
    assert!(res.failures.is_empty(), "{:?}", res.failures);
    let column = |t_g: f64, f: &dyn Fn(&RunMetrics) -> f64| median(res.runs.iter().filter(|m| m.block_interval_s == t_g).map(f).collect());
    let discard: Vec<f64> = intervals.iter().map(|&t| column(t, &|m| m.discard_rate())).collect();
    let tx: Vec<f64> = intervals.iter().map(|&t| column(t, &|m| m.tx_throughput_per_s)).collect();

    let discard_decreasing = discard.windows(2).all(|w| w[1] <= w[0]);
    // ordered by interval: an interior peak means the curve rises from 4 s
    // toward small intervals and then falls again
    let peak = (0..tx.len()).max_by(|&a, &b| tx[a].total_cmp(&tx[b])).unwrap();
    let non_monotone = peak > 0 && peak < tx.len() - 1;
    let elapsed = start.elapsed();
    let pass = discard_decreasing && non_monotone && elapsed < Duration::from_secs(600);
    let fmt = |v: &[f64], p: usize| v.iter().map(|x| format!("{x:.prec$}", prec = p)).collect::<Vec<_>>().join(", ");
    report(
        6,
        "fork-rate monotonicity",
        pass,
        format!(
            "T_G [{}] s: median discard rate [{}] weakly decreasing: {discard_decreasing}; median TX/s [{}] interior peak: {non_monotone}, {elapsed:.0?}",
            fmt(&intervals, 1),
            fmt(&discard, 4),
            fmt(&tx, 1)
        ),
    );
    pass
}

fn c07_strategy_ordering() -> bool {
    let start = Instant::now();
    let strategies = ["random", "max_sinr", "enhanced_max_sinr"];
    let base = congested_base();
    let spec = SweepSpec {
        axis: SweepAxis::NVehicles,
        values: vec![base.traffic.n_vehicles as f64],
        seeds: (1..=10).collect(),
        strategies: strategies.map(String::from).to_vec(),
    };
    let res = run_sweep(&base, &spec, jobs()).unwrap();
    assert!(res.failures.is_empty(), "{:?}", res.failures);
    let by = |s: &str| -> Vec<&RunMetrics> { res.runs.iter().filter(|m| m.strategy == s).collect() };
    let (random, max_sinr, enhanced) = (by("random"), by("max_sinr"), by("enhanced_max_sinr"));
    let med = |v: &[&RunMetrics], f: fn(&RunMetrics) -> f64| median(v.iter().map(|m| f(m)).collect());

    let mut pass = true;
    let mut detail = Vec::new();
    let metrics: [(&str, fn(&RunMetrics) -> f64); 2] =
        [("M/ms", |m| m.message_throughput_m_per_ms), ("TX/s", |m| m.tx_throughput_per_s)];
    for (name, f) in metrics {
        let (r, m, e) = (med(&random, f), med(&max_sinr, f), med(&enhanced, f));
        let ordered = e >= m && m >= r;
        let strictly_above = enhanced.iter().zip(&random).filter(|(e, r)| e.seed == r.seed && f(e) > f(r)).count();
        pass &= ordered && strictly_above >= 9;
        detail.push(format!("{name} medians E {e:.4} / M {m:.4} / R {r:.4} ordered: {ordered}, E > R in {strictly_above}/10 pairs"));
    }
    let elapsed = start.elapsed();
    pass &= elapsed < Duration::from_secs(600);
    report(7, "strategy ordering", pass, format!("{}, {elapsed:.0?}", detail.join("; ")));
    pass
}

/// Four significant figures.
fn sig4(x: f64) -> String {
    format!("{x:.3e}")
}

fn c08_link_budget_worked_examples() -> bool {
    let mut lines = Vec::new();
    let mut matched = true;
    let mut check = |what: &str, got: f64, hand: f64| {
        matched &= sig4(got) == sig4(hand);
        lines.push(format!("{what} {} vs {}", sig4(got), sig4(hand)));
    };

    // -174 dBm/Hz + 10 log10(1e6 Hz) + 5 dB
    let noise = noise_power_dbm(1e6, 5.0);
    check("noise dBm", noise, -174.0 + 60.0 + 5.0);

    // 19 dB above the noise floor
    let s = sinr(-90.0, -109.0, &[]);
    check("sinr", s, 10f64.powf(1.9));
    check("sinr quoted", s, 79.43);

    let bits = 650.0 * 8.0;
    let hand_rate = 1e6 * (1.0 + 10f64.powf(1.9)).ln() / std::f64::consts::LN_2;
    let out = link_outcome(s, 1e6, bits, 100.0, &LinkLimits::default());
    check("rate bps", out.rate_bps, hand_rate);
    check("transmit s", out.transmit_s, bits / hand_rate);
    check("propagation s", out.propagation_s, 100.0 / 299_792_458.0);

    // the quoted 0.823 ms is 650 bytes over exactly 6.32 Mb/s
    let sinr_at_quoted_rate = 2f64.powf(6.32) - 1.0;
    assert!((shannon_rate(1e6, sinr_at_quoted_rate) - 6.32e6).abs() < 1e-3);
    let at_quoted = link_outcome(sinr_at_quoted_rate, 1e6, bits, 100.0, &LinkLimits::default());
    check("transmit at 6.32 Mb/s", at_quoted.transmit_s, 5200.0 / 6.32e6);
    let quoted_ms = format!("{:.3}", at_quoted.transmit_s * 1e3);

    // SINR 0.1: far beyond the 3 ms budget
    let weak = link_outcome(0.1, 1e6, bits, 100.0, &LinkLimits::default());
    check("weak transmit s", weak.transmit_s, bits / (1e6 * 1.1f64.log2()));

    let pass = matched && out.success && quoted_ms == "0.823" && !weak.success;

    report(8, "link-budget oracles", pass, lines.join(", "));
    pass
}

fn action(mode: Mode, power: f64, index: u8, outcome: Outcome) -> LinkAction {
    let band = mode.band();
    LinkAction { mode, tx_power_dbm: power, sub_channel: SubChannel { band, index, bandwidth_hz: 1e6 }, attempt: 0, outcome }
}

/// Every mode on three powers and four sub-channels, with distinct
/// estimates.
fn candidate_set<R: Rng>(rng: &mut R) -> Vec<Candidate> {
    let mut out = Vec::new();
    for mode in Mode::ALL {
        for power in [17.0, 20.0, 23.0] {
            for index in 0..4 {
                out.push(Candidate { action: action(mode, power, index, Outcome::Pending), estimate: rng.random::<f64>() * 100.0 });
            }
        }
    }
    out
}

fn argmax(c: &[Candidate], keep: impl Fn(&LinkAction) -> bool) -> usize {
    let mut best = None;
    for (i, x) in c.iter().enumerate() {
        if keep(&x.action) && best.is_none_or(|b: usize| x.estimate > c[b].estimate) {
            best = Some(i);
        }
    }
    best.unwrap()
}

fn c09_enhanced_selection_branches() -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE_0009);
    let mut notes = Vec::new();
    let mut pass = true;

    // forced branches
    let cands = candidate_set(&mut rng);
    let prev = action(Mode::V2V2I, 20.0, 2, Outcome::Failure);
    let global = argmax(&cands, |_| true);
    let first = AttemptContext { round: 3, vehicle_id: "veh0", attempt: 0, previous: None };
    let (i0, b0) = select_enhanced(&first, &cands, &mut rng);
    let forced = [
        (b0 == EnhancedBranch::Initial && i0 == global, "initial"),
        (select_enhanced_case(&prev, &cands, 0) == (argmax(&cands, |a| a.mode != prev.mode), EnhancedBranch::Case(0)), "case 0"),
        (
            select_enhanced_case(&prev, &cands, 1)
                == (argmax(&cands, |a| a.mode == prev.mode && a.sub_channel.index != prev.sub_channel.index), EnhancedBranch::Case(1)),
            "case 1",
        ),
        (matches!(select_enhanced_case(&prev, &cands, 2), (i, EnhancedBranch::Case(2)) if cands[i].action.same_choice(&prev)), "case 2"),
        (select_enhanced_case(&prev, &cands, 3) == (global, EnhancedBranch::Case(3)), "case 3"),
    ];
    for (ok, name) in forced {
        pass &= ok;
        if !ok {
            notes.push(format!("{name} wrong"));
        }
    }

    // branch frequencies and the change guarantees of cases 0 and 1
    let events = 100_000;
    let mut counts = [0u64; 4];
    let mut case0_changed_mode = true;
    let mut case1_changed_channel = true;
    for round in 0..events {
        let cands = candidate_set(&mut rng);
        let modes = Mode::ALL;
        let prev = action(modes[rng.random_range(0..3)], 20.0, rng.random_range(0..4), Outcome::Failure);
        let ctx = AttemptContext { round, vehicle_id: "veh0", attempt: 1 + (round % 4) as u32, previous: Some(prev) };
        match select_enhanced(&ctx, &cands, &mut rng) {
            (i, EnhancedBranch::Case(k)) => {
                counts[k as usize] += 1;
                let a = &cands[i].action;
                if k == 0 {
                    case0_changed_mode &= a.mode != prev.mode;
                }
                if k == 1 {
                    case1_changed_channel &= a.mode == prev.mode && a.sub_channel.index != prev.sub_channel.index;
                }
            }
            (_, other) => {
                pass = false;
                notes.push(format!("unexpected {other:?}"));
            }
        }
    }
    let fractions: Vec<f64> = counts.iter().map(|&c| c as f64 / events as f64).collect();
    let balanced = fractions.iter().all(|f| (f - 0.25).abs() <= 0.02);
    pass &= balanced && case0_changed_mode && case1_changed_channel;
    report(
        9,
        "selection branch conformance",
        pass,
        format!(
            "forced branches ok: {}, shares {:?} within 0.25 +/- 0.02, case 0 changes mode: {case0_changed_mode}, case 1 changes sub-channel: {case1_changed_channel}{}",
            notes.is_empty(),
            fractions.iter().map(|f| format!("{f:.4}")).collect::<Vec<_>>(),
            if notes.is_empty() { String::new() } else { format!(" ({})", notes.join("; ")) }
        ),
    );
    pass
}

fn csv_bytes(rows: &[RunMetrics]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_csv(rows, &mut buf).unwrap();
    buf
}

fn c10_runs_and_sweeps_are_deterministic() -> bool {
    let cfg = load_scenario(&fixture("small.toml")).unwrap();
    let opts = RunOptions { record_log: true, ..RunOptions::default() };
    let once = || {
        let out = run(&cfg, &opts).unwrap();
        let mut log = Vec::new();
        out.log.write_ndjson(&mut log).unwrap();
        (csv_bytes(std::slice::from_ref(&out.metrics)), log)
    };
    let (csv_a, log_a) = once();
    let (csv_b, log_b) = once();
    let runs_identical = csv_a == csv_b && log_a == log_b && !log_a.is_empty();

    let mut base = cfg.clone();
    base.sim_time_s = 4.0;
    let spec = SweepSpec {
        axis: SweepAxis::BlockInterval,
        values: vec![1.0, 2.7],
        seeds: vec![1, 2],
        strategies: vec!["random".into(), "enhanced_max_sinr".into()],
    };
    let serial = run_sweep(&base, &spec, 1).unwrap();
    let parallel = run_sweep(&base, &spec, 3).unwrap();
    let sweeps_identical = csv_bytes(&serial.runs) == csv_bytes(&parallel.runs) && serial.aggregate == parallel.aggregate;

    let pass = runs_identical && sweeps_identical;
    report(
        10,
        "determinism",
        pass,
        format!("repeat run identical: {runs_identical} ({} log bytes), sweep jobs 1 vs 3 identical: {sweeps_identical}", log_a.len()),
    );
    pass
}

/// Mod-10 sum of digits with '-' counting as one, over the first 68 columns.
fn tle_line_checksum(line: &str) -> u32 {
    line.chars().take(68).map(|c| if c == '-' { 1 } else { c.to_digit(10).unwrap_or(0) }).sum::<u32>() % 10
}

fn c11_trace_and_tle_parsers() -> bool {
    let fcd_text = std::fs::read(fixture("urban.fcd.xml")).unwrap();
    let csv_text = std::fs::read(fixture("urban.csv")).unwrap();
    let fcd = parse_fcd_trace(&fcd_text[..]).unwrap();
    let csv = parse_csv_trace(&csv_text[..]).unwrap();

    let mut buf = Vec::new();
    write_fcd_trace(&fcd, &mut buf).unwrap();
    let fcd_round_trip = parse_fcd_trace(&buf[..]).unwrap() == fcd;
    let mut buf = Vec::new();
    write_csv_trace(&csv, &mut buf).unwrap();
    let csv_round_trip = parse_csv_trace(&buf[..]).unwrap() == csv;
    let formats_agree = fcd == csv && fcd.vehicle_count() == 6;

    let good = std::fs::read_to_string(fixture("starlink.tle")).unwrap();
    let records = parse_tle_file(&good);
    let lines_check = good
        .lines()
        .filter(|l| l.starts_with("1 ") || l.starts_with("2 "))
        .all(|l| tle_line_checksum(l) == l[68..69].parse::<u32>().unwrap());
    let tle_ok = lines_check && records.as_ref().is_ok_and(|r| !r.is_empty());
    let bad = std::fs::read_to_string(fixture("starlink_bad_checksum.tle")).unwrap();
    let rejected = matches!(parse_tle_file(&bad), Err(TleError::Checksum { .. }));

    let pass = fcd_round_trip && csv_round_trip && formats_agree && tle_ok && rejected;
    report(
        11,
        "parsers",
        pass,
        format!(
            "FCD round trip: {fcd_round_trip}, CSV round trip: {csv_round_trip}, FCD == CSV: {formats_agree}, TLE parsed {} records: {tle_ok}, bad checksum rejected: {rejected}",
            records.map(|r| r.len()).unwrap_or(0)
        ),
    );
    pass
}

const CRITERIA: [fn() -> bool; 11] = [
    c01_race_winner_frequencies_follow_hash_share,
    c02_single_miner_block_times_are_exponential,
    c03_broadcast_delay_mean,
    c04_saturated_pool_reaches_gas_ceiling,
    c05_fork_resolution_drops_losing_branch,
    c06_forks_grow_as_block_interval_shrinks,
    c07_strategy_ordering,
    c08_link_budget_worked_examples,
    c09_enhanced_selection_branches,
    c10_runs_and_sweeps_are_deterministic,
    c11_trace_and_tle_parsers,
];

fn main() {
    // `cargo test --test acceptance -- 6 7` runs only the listed criteria
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    for (i, criterion) in CRITERIA.iter().enumerate() {
        let n = i + 1;
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let pass = std::panic::catch_unwind(criterion).unwrap_or_else(|_| {
            println!("criterion {n:>2} FAIL panicked");
            false
        });
        if !pass {
            failed.push(n);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
