//! Experiment harness: run configs, compute metrics, check properties,
//! drive the balance-attack study, and sweep parameter grids. All outputs
//! are deterministic functions of the config files.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::conflux::{self, AttackConfig};
use crate::simnet::checks;
use crate::simnet::{run, RunReport, SimConfig};

pub const OUT_DIR_ENV: &str = "OHIE_OUT_DIR";

#[derive(Parser, Debug)]
#[command(name = "ohie", about = "parallel-chain consensus simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Execute one simulation run and write report.json + CSV series.
    Run(RunArgs),
    /// Summarize throughput, decentralization, and latency of a report.
    Metrics {
        /// Path to a report.json produced by `run`.
        report: PathBuf,
    },
    /// Re-run the property checkers over a report.
    Check {
        report: PathBuf,
        /// Quality-growth window multiplier.
        #[arg(long, default_value_t = 1)]
        gamma: u64,
    },
    /// Run the GHOST balance-attack trials and write fork-length samples.
    Attack(AttackArgs),
    /// Expand list-valued fields of a config into a run per combination.
    Sweep(SweepArgs),
}

#[derive(Args, Debug)]
pub struct RunArgs {
    /// SimConfig as TOML (default) or JSON (.json).
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// Output directory (default: $OHIE_OUT_DIR or the current dir).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AttackArgs {
    /// AttackConfig as TOML or JSON.
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// Sweep file: a `base` SimConfig table plus a `sweep` table mapping
    /// dotted field paths to value lists.
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub gamma: u64,
}

fn out_dir(flag: &Option<PathBuf>) -> PathBuf {
    flag.clone()
        .or_else(|| std::env::var(OUT_DIR_ENV).ok().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn read_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    } else {
        toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

/// The §-metrics of a finished run, all in ticks and payload bytes.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Metrics {
    /// Fully-confirmed payload bytes per tick (node-0 view).
    pub throughput_bytes_per_tick: f64,
    /// Distinct fully-confirmed blocks per per-chain block interval.
    pub decentralization_factor: f64,
    /// Per-chain block interval 1/(p*n), ticks.
    pub block_interval_ticks: f64,
    pub confirmed_blocks: u64,
    pub partial_latency_mean: f64,
    pub partial_latency_median: f64,
    pub full_latency_mean: f64,
    pub full_latency_median: f64,
    /// Mean distinct proposers among confirmed blocks per window of ten
    /// block intervals.
    pub distinct_proposers_per_window: f64,
}

fn mean(v: &[u64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.iter().sum::<u64>() as f64 / v.len() as f64
}

fn median(v: &[u64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let mut s = v.to_vec();
    s.sort_unstable();
    if s.len() % 2 == 1 {
        s[s.len() / 2] as f64
    } else {
        (s[s.len() / 2 - 1] + s[s.len() / 2]) as f64 / 2.0
    }
}

pub fn compute_metrics(report: &RunReport) -> Metrics {
    let ticks = report.config.ticks as f64;
    let interval = 1.0 / (report.config.params.p * report.config.n as f64);
    let bytes: u64 = report.confirmed.iter().map(|c| c.payload_bytes).sum();
    // distinct proposers over tumbling windows of 10 block intervals
    let window = (interval * 10.0).ceil() as u64;
    let mut proposer_counts = Vec::new();
    let mut start = 0u64;
    while start < report.config.ticks {
        let mut set = std::collections::HashSet::new();
        for c in report
            .confirmed
            .iter()
            .filter(|c| c.tick >= start && c.tick < start + window)
        {
            set.insert(c.miner);
        }
        if !set.is_empty() {
            proposer_counts.push(set.len() as u64);
        }
        start += window;
    }
    Metrics {
        throughput_bytes_per_tick: bytes as f64 / ticks,
        decentralization_factor: report.confirmed.len() as f64 * interval / ticks,
        block_interval_ticks: interval,
        confirmed_blocks: report.confirmed.len() as u64,
        partial_latency_mean: mean(&report.latency_partial),
        partial_latency_median: median(&report.latency_partial),
        full_latency_mean: mean(&report.latency_full),
        full_latency_median: median(&report.latency_full),
        distinct_proposers_per_window: mean(&proposer_counts),
    }
}

fn write_report(dir: &Path, report: &RunReport) -> Result<(), String> {
    fs::create_dir_all(dir).map_err(|e| e.to_string())?;
    let json = serde_json::to_string_pretty(report).map_err(|e| e.to_string())?;
    fs::write(dir.join("report.json"), json).map_err(|e| e.to_string())?;
    fs::write(dir.join("trace.csv"), report.trace_csv()).map_err(|e| e.to_string())?;
    fs::write(dir.join("snapshots.csv"), report.snapshots_csv()).map_err(|e| e.to_string())?;
    Ok(())
}

fn cmd_run(args: &RunArgs) -> Result<i32, String> {
    let mut config: SimConfig = read_config(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(ce) = args.checkpoint_every {
        config.checkpoint_every = ce;
    }
    let report = run(&config).map_err(|e| e.to_string())?;
    let dir = out_dir(&args.out);
    write_report(&dir, &report)?;
    let consistency = checks::check_consistency(&report);
    let fatal = !consistency.ok() || !report.attachment_determinism_ok;
    println!(
        "run: {} ticks, {} honest + {} adversarial blocks, consistency violations {}, report in {}",
        config.ticks,
        report.honest_mined,
        report.adversary_mined,
        consistency.violations,
        dir.display()
    );
    Ok(if fatal { 1 } else { 0 })
}

fn cmd_metrics(path: &Path) -> Result<i32, String> {
    let text = fs::read_to_string(path).map_err(|e| e.to_string())?;
    let report: RunReport = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let metrics = compute_metrics(&report);
    println!("{}", serde_json::to_string_pretty(&metrics).unwrap());
    Ok(0)
}

fn cmd_check(path: &Path, gamma: u64) -> Result<i32, String> {
    let text = fs::read_to_string(path).map_err(|e| e.to_string())?;
    let report: RunReport = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let mut fatal = false;
    println!("property        windows violations fraction");
    for (name, v) in checks::run_all(&report, gamma) {
        println!(
            "{name:<15} {:>7} {:>10} {:>8.5}",
            v.windows,
            v.violations,
            v.fraction()
        );
        if v.fatal && !v.ok() {
            fatal = true;
        }
    }
    Ok(if fatal { 1 } else { 0 })
}

fn cmd_attack(args: &AttackArgs) -> Result<i32, String> {
    let config: AttackConfig = read_config(&args.config)?;
    let samples = conflux::run_attack(&config).map_err(|e| e.to_string())?;
    let dir = out_dir(&args.out);
    fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    let mut csv = String::from("blocks_per_round,f,quantile,fork_length\n");
    for q in [0.5, 0.95, 0.99] {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            config.blocks_per_round,
            config.f,
            q,
            conflux::quantile(&samples, q)
        ));
    }
    fs::write(dir.join("attack_quantiles.csv"), &csv).map_err(|e| e.to_string())?;
    let samples_csv: String = samples
        .iter()
        .map(|s| format!("{s}\n"))
        .collect::<String>();
    fs::write(dir.join("attack_samples.csv"), format!("fork_length\n{samples_csv}"))
        .map_err(|e| e.to_string())?;
    print!("{csv}");
    Ok(0)
}

/// Set `value` at a dotted path inside a JSON object tree.
fn set_path(root: &mut serde_json::Value, path: &str, value: serde_json::Value) -> Result<(), String> {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| format!("path {path}: {part} is not an object"))?;
        if i + 1 == parts.len() {
            obj.insert((*part).to_string(), value);
            return Ok(());
        }
        cur = obj
            .get_mut(*part)
            .ok_or_else(|| format!("path {path}: no field {part}"))?;
    }
    unreachable!()
}

#[derive(Debug, Deserialize)]
struct SweepFile {
    base: SimConfig,
    /// dotted field path -> list of values
    sweep: std::collections::BTreeMap<String, Vec<serde_json::Value>>,
}

fn cmd_sweep(args: &SweepArgs) -> Result<i32, String> {
    let file: SweepFile = read_config(&args.config)?;
    let dir = out_dir(&args.out);
    fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    let fields: Vec<&String> = file.sweep.keys().collect();
    let mut combos: Vec<Vec<serde_json::Value>> = vec![Vec::new()];
    for f in &fields {
        let mut next = Vec::new();
        for combo in &combos {
            for v in &file.sweep[*f] {
                let mut c = combo.clone();
                c.push(v.clone());
                next.push(c);
            }
        }
        combos = next;
    }
    let base_json = serde_json::to_value(&file.base).map_err(|e| e.to_string())?;
    let mut summary =
        String::from("run,seed,fields,honest_mined,adversary_mined,scb_len,consistency_violations\n");
    let mut fatal = false;
    for (idx, combo) in combos.iter().enumerate() {
        let mut v = base_json.clone();
        for (f, val) in fields.iter().zip(combo) {
            set_path(&mut v, f, val.clone())?;
        }
        let mut config: SimConfig = serde_json::from_value(v).map_err(|e| e.to_string())?;
        // distinct derived seed per grid point
        config.seed = file.base.seed.wrapping_add(idx as u64);
        let report = run(&config).map_err(|e| e.to_string())?;
        let sub = dir.join(format!("run_{idx:03}"));
        write_report(&sub, &report)?;
        let cons = checks::check_consistency(&report);
        if !cons.ok() {
            fatal = true;
        }
        let label = fields
            .iter()
            .zip(combo)
            .map(|(f, v)| format!("{f}={v}"))
            .collect::<Vec<_>>()
            .join(";");
        summary.push_str(&format!(
            "{idx},{},{label},{},{},{},{}\n",
            config.seed,
            report.honest_mined,
            report.adversary_mined,
            report.reference_scb.len(),
            cons.violations
        ));
    }
    fs::write(dir.join("sweep_summary.csv"), &summary).map_err(|e| e.to_string())?;
    print!("{summary}");
    Ok(if fatal { 1 } else { 0 })
}

pub fn dispatch(cli: Cli) -> i32 {
    let result = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Metrics { report } => cmd_metrics(report),
        Command::Check { report, gamma } => cmd_check(report, *gamma),
        Command::Attack(args) => cmd_attack(args),
        Command::Sweep(args) => cmd_sweep(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}
