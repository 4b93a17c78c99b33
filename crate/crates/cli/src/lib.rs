//! Command-line experiment runner: loads a scenario and topology, runs the
//! Monte-Carlo simulation and writes `results.csv` and `summary.json`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use clap::Parser;
use phdfit::filters::FilterKind;
use phdfit::metrics::acc;
use phdfit::network::{CommMode, FitStats, FusionMethod, Topology};
use phdfit::scenario::{run_monte_carlo, MonteCarloOutput, RunResult, RunSummary, ScenarioConfig};
use serde::Serialize;

pub const RESULTS_FILE: &str = "results.csv";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Clone, Parser)]
#[command(name = "phdfit", version, about = "Distributed GM-PHD fusion Monte-Carlo simulator")]
pub struct Args {
    /// Scenario JSON; built-in defaults when omitted.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Topology JSON (`node_count` plus `edges` or `adjacency`).
    #[arg(long)]
    pub topology: Option<PathBuf>,
    /// none, cc-only, weight-fit or gm-fit.
    #[arg(long, value_parser = parse_fusion)]
    pub fusion: Option<FusionMethod>,
    /// consensus or flooding.
    #[arg(long, value_parser = parse_comm)]
    pub comm: Option<CommMode>,
    /// Dissemination rounds per time step.
    #[arg(long)]
    pub t: Option<usize>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Sensor filters, e.g. `phd:4,mb:4,lmb:4`.
    #[arg(long)]
    pub filters: Option<String>,
    /// Fit stopping threshold (scenario value, 0.1 by default).
    #[arg(long)]
    pub gamma_g: Option<f64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_fusion(s: &str) -> Result<FusionMethod, String> {
    s.parse().map_err(|e: phdfit::Error| e.to_string())
}

fn parse_comm(s: &str) -> Result<CommMode, String> {
    s.parse().map_err(|e: phdfit::Error| e.to_string())
}

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, files or configuration.
    Usage(String),
    Io(String),
    /// Some runs were aborted; partial results were written.
    Diverged(usize),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) => 1,
            CliError::Diverged(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Io(m) => write!(f, "I/O error: {m}"),
            CliError::Diverged(n) => write!(f, "{n} run(s) aborted; partial results written"),
        }
    }
}

impl std::error::Error for CliError {}

/// Parses `phd:4,mb:4,lmb:4` (a bare name counts once).
pub fn parse_filters(spec: &str) -> Result<Vec<FilterKind>, String> {
    let mut out = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (name, count) = match part.split_once(':') {
            Some((n, c)) => (n, c.parse::<usize>().map_err(|_| format!("bad count in `{part}`"))?),
            None => (part, 1),
        };
        let kind: FilterKind = name.parse().map_err(|e: phdfit::Error| e.to_string())?;
        out.extend(std::iter::repeat(kind).take(count));
    }
    if out.is_empty() {
        return Err("empty filter list".into());
    }
    Ok(out)
}

/// Builds the effective scenario and topology from the flags.
pub fn resolve(args: &Args) -> Result<(ScenarioConfig, Topology), CliError> {
    let mut config = match &args.scenario {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", p.display())))?;
            ScenarioConfig::from_json(&text).map_err(|e| CliError::Usage(e.to_string()))?
        }
        None => ScenarioConfig::default(),
    };
    if let Some(f) = args.fusion {
        config.fusion = f;
    }
    if let Some(c) = args.comm {
        config.comm = c;
    }
    if let Some(t) = args.t {
        config.rounds = t;
    }
    if let Some(r) = args.runs {
        config.runs = r;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(f) = &args.filters {
        config.sensors = parse_filters(f).map_err(CliError::Usage)?;
    }
    if let Some(g) = args.gamma_g {
        config.gamma_g = g;
    }
    let topology = match &args.topology {
        Some(p) => Topology::load(p),
        None => config.topology(),
    }
    .map_err(|e| CliError::Usage(e.to_string()))?;
    if config.fusion == FusionMethod::IsdCdm {
        return Err(CliError::Usage(phdfit::Error::NotImplemented("isd-cdm fusion").to_string()));
    }
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok((config, topology))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigSummary {
    pub filter_type: FilterKind,
    pub fusion: FusionMethod,
    pub comm: CommMode,
    pub t: usize,
    pub rows: usize,
    pub mean_ospa: f64,
    pub mean_n_hat: f64,
    pub mean_n_true: f64,
    /// Average communication cost per sensor and time step.
    pub acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub rows: usize,
    pub mean_ospa: f64,
    pub acc: f64,
    pub configurations: Vec<ConfigSummary>,
    pub fit: FitStats,
    pub runs: Vec<RunSummary>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn acc_of(rows: &[&RunResult]) -> f64 {
    let runs: BTreeSet<usize> = rows.iter().map(|r| r.run).collect();
    let steps: BTreeSet<usize> = rows.iter().map(|r| r.step).collect();
    let sensors: BTreeSet<usize> = rows.iter().map(|r| r.sensor).collect();
    let costs: Vec<f64> = rows.iter().map(|r| r.cost).collect();
    acc(&costs, runs.len(), steps.len(), sensors.len())
}

/// Per-configuration means and overall counters.
pub fn summarize(output: &MonteCarloOutput) -> Summary {
    let mut groups: BTreeMap<(FilterKind, &str, &str, usize), Vec<&RunResult>> = BTreeMap::new();
    for r in &output.rows {
        groups
            .entry((r.filter_type, r.fusion.as_str(), r.comm.as_str(), r.t))
            .or_default()
            .push(r);
    }
    let configurations = groups
        .into_values()
        .map(|rows| ConfigSummary {
            filter_type: rows[0].filter_type,
            fusion: rows[0].fusion,
            comm: rows[0].comm,
            t: rows[0].t,
            rows: rows.len(),
            mean_ospa: mean(rows.iter().map(|r| r.ospa)),
            mean_n_hat: mean(rows.iter().map(|r| r.n_hat)),
            mean_n_true: mean(rows.iter().map(|r| r.n_true as f64)),
            acc: acc_of(&rows),
        })
        .collect();
    let all: Vec<&RunResult> = output.rows.iter().collect();
    Summary {
        rows: output.rows.len(),
        mean_ospa: mean(output.rows.iter().map(|r| r.ospa)),
        acc: acc_of(&all),
        configurations,
        fit: output.stats,
        runs: output.runs.clone(),
    }
}

/// Writes rows sorted by (run, step, sensor).
pub fn write_csv(path: &Path, rows: &[RunResult]) -> Result<(), CliError> {
    let mut sorted: Vec<&RunResult> = rows.iter().collect();
    sorted.sort_by_key(|r| (r.run, r.step, r.sensor));
    let io = |e: csv::Error| CliError::Io(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    for r in sorted {
        w.serialize(r).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::Io(e.to_string()))
}

/// What a successful (or partially successful) invocation produced.
#[derive(Debug, Clone)]
pub struct Report {
    pub output: MonteCarloOutput,
    pub summary: Summary,
    pub results_path: PathBuf,
    pub summary_path: PathBuf,
}

/// Runs the experiment described by `args` and writes both output files.
/// Aborted runs still produce files but yield `CliError::Diverged`.
pub fn run(args: &Args) -> Result<Report, CliError> {
    let (config, topology) = resolve(args)?;
    let output = run_monte_carlo(&config, &topology).map_err(|e| CliError::Usage(e.to_string()))?;
    fs::create_dir_all(&args.out).map_err(|e| CliError::Io(format!("{}: {e}", args.out.display())))?;
    let results_path = args.out.join(RESULTS_FILE);
    let summary_path = args.out.join(SUMMARY_FILE);
    write_csv(&results_path, &output.rows)?;
    let summary = summarize(&output);
    let json = serde_json::to_string_pretty(&summary).map_err(|e| CliError::Io(e.to_string()))?;
    fs::write(&summary_path, json + "\n").map_err(|e| CliError::Io(format!("{}: {e}", summary_path.display())))?;
    let aborted = output.runs.iter().filter(|r| r.aborted).count();
    if aborted > 0 {
        return Err(CliError::Diverged(aborted));
    }
    Ok(Report {
        output,
        summary,
        results_path,
        summary_path,
    })
}
