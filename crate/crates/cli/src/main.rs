//! `cct`: tail calibration, size and power studies, copula certificates,
//! pathway analysis and p-value combination from the command line.
//!
//! Every option may also come from `--config FILE` (`key = value` lines, or
//! the manifest of an earlier run); flags win. With `--output PATH` the
//! artifact goes to PATH and a manifest to `PATH.manifest.json`.
//!
//! Exit codes: 0 success, 1 invalid input, 2 runtime failure.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use cct_core::rng::Workers;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use settings::{flag_pairs, invalid, load_config, Fail, Manifest, Settings};

#[derive(Debug, Parser)]
#[command(name = "cct", version, about = "Cauchy combination test toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Empirical null tail of the CCT statistic against the Cauchy tail.
    CalibrateTail(CalibrateTailArgs),
    /// Monte Carlo size of the CCT at one or more levels.
    Size(SizeArgs),
    /// CCT vs MAX power over a grid of m.
    Power(PowerArgs),
    /// Decay certificate for a bivariate copula.
    CheckCopula(CheckCopulaArgs),
    /// Wilcoxon per-gene tests combined by CCT and permutation MINP.
    Analyze(AnalyzeArgs),
    /// Combine a file of p-values.
    Combine(CombineArgs),
}

/// Options shared by every command; not part of the echoed config except
/// `format`.
#[derive(Debug, Args, Default)]
struct Common {
    /// `key = value` config file, or a manifest from an earlier run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: CCT_WORKERS, else 1).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Artifact path (default: stdout).
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
    /// Manifest path (default: `<output>.manifest.json`).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// csv or json.
    #[arg(long, global = true)]
    format: Option<String>,
}

#[derive(Debug, Args, Serialize)]
struct ScenarioArgs {
    /// equal-corr, spiked, ar1, poly-decay, explicit, fgm or amh.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    rho: Option<f64>,
    /// Number of spikes (spiked).
    #[arg(long)]
    d: Option<usize>,
    /// Spike base (spiked, default 3).
    #[arg(long)]
    base: Option<f64>,
    /// Seed of the random eigenbasis (spiked, default 0).
    #[arg(long)]
    matrix_seed: Option<u64>,
    /// Decay exponent (poly-decay).
    #[arg(long)]
    a: Option<f64>,
    /// Copula parameter (fgm, amh).
    #[arg(long, allow_hyphen_values = true)]
    theta: Option<f64>,
    /// Binary correlation matrix (explicit).
    #[arg(long)]
    matrix: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct CalibrateTailArgs {
    #[command(flatten)]
    #[serde(flatten)]
    scenario: ScenarioArgs,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated thresholds (default: 40 log-spaced points).
    #[arg(long)]
    t_grid: Option<String>,
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
}

#[derive(Debug, Args, Serialize)]
struct SizeArgs {
    #[command(flatten)]
    #[serde(flatten)]
    scenario: ScenarioArgs,
    /// Comma-separated levels (default 0.05,0.01,0.001).
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
}

#[derive(Debug, Args, Serialize)]
struct PowerArgs {
    /// ar1 or poly-decay.
    #[arg(long)]
    model: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    rho: Option<f64>,
    #[arg(long)]
    a: Option<f64>,
    /// Comma-separated m values.
    #[arg(long)]
    m_grid: Option<String>,
    /// Fraction of nonzero means.
    #[arg(long)]
    support: Option<f64>,
    /// A number, `default` (√(1.2 log m)) or `auto` (tuned to the power band).
    #[arg(long)]
    magnitude: Option<String>,
    /// `lo,hi` target CCT power for `--magnitude auto`.
    #[arg(long)]
    power_band: Option<String>,
    /// prefix or random.
    #[arg(long)]
    placement: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    replicates: Option<usize>,
    /// Also calibrate MAX by this many null draws.
    #[arg(long)]
    mc_max: Option<usize>,
    #[arg(long)]
    pilot_replicates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
}

#[derive(Debug, Args, Serialize)]
struct CheckCopulaArgs {
    /// product, fgm, cuadras-auge, normal, amh or survival.
    #[arg(long)]
    family: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    theta: Option<f64>,
    /// Alias of --theta for the normal copula.
    #[arg(long, allow_hyphen_values = true)]
    rho: Option<f64>,
    /// fixed or divergent.
    #[arg(long)]
    regime: Option<String>,
    /// Number of tests (fixed regime).
    #[arg(long)]
    m: Option<usize>,
    /// Growth exponent, m = ⌊t^{γ/2}⌋ (divergent regime).
    #[arg(long)]
    gamma: Option<f64>,
    /// Normal copula: δ_t·t = t^β.
    #[arg(long)]
    beta: Option<f64>,
    /// Override δ_t = t^e.
    #[arg(long, allow_hyphen_values = true)]
    delta_exponent: Option<f64>,
    #[arg(long)]
    weight_i: Option<f64>,
    #[arg(long)]
    weight_j: Option<f64>,
    #[arg(long)]
    t_min: Option<f64>,
    #[arg(long)]
    t_max: Option<f64>,
    #[arg(long)]
    points: Option<usize>,
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
}

#[derive(Debug, Args, Serialize)]
struct AnalyzeArgs {
    /// Genes × samples matrix with a `gene_id` header row.
    #[arg(long)]
    expression: Option<PathBuf>,
    /// `sample_id,group` lines, group CASE or CONTROL.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Gene ids separated by whitespace or commas.
    #[arg(long)]
    gene_set: Option<PathBuf>,
    /// csv or tsv (default: from the file extension).
    #[arg(long)]
    table_format: Option<String>,
    /// `equal` or a file with one weight per gene found in the data.
    #[arg(long)]
    weights: Option<String>,
    #[arg(long)]
    minp_replicates: Option<usize>,
    /// Also write the per-gene p-values here.
    #[arg(long)]
    per_gene: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
}

#[derive(Debug, Args, Serialize)]
struct CombineArgs {
    /// One p-value per line, or a CSV with a column named `p`.
    #[arg(long)]
    pvalues: Option<PathBuf>,
    /// cct, max, minp, fisher, pearson, stouffer or edgington.
    #[arg(long)]
    method: Option<String>,
    /// `equal` or a file of weights (rescaled to sum to one).
    #[arg(long)]
    weights: Option<String>,
    /// Monte Carlo draws for minp.
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(format!("unknown format `{other}` (csv or json)")),
        }
    }
}

impl std::fmt::Display for Format {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Format::Csv => "csv",
            Format::Json => "json",
        })
    }
}

fn workers(flag: Option<usize>) -> Result<Workers, Fail> {
    let n = match flag {
        Some(n) => n,
        None => match std::env::var("CCT_WORKERS") {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| invalid(format!("CCT_WORKERS: cannot parse `{v}`")))?,
            Err(_) => 1,
        },
    };
    Ok(Workers::new(n)?)
}

fn write_file(path: &std::path::Path, body: &str) -> Result<(), Fail> {
    std::fs::write(path, body).map_err(|e| Fail::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<(), Fail> {
    let start = Instant::now();
    let (name, common, flags, default_format) = match &cli.command {
        Command::CalibrateTail(a) => ("calibrate-tail", &a.common, flag_pairs(a), Format::Csv),
        Command::Size(a) => ("size", &a.common, flag_pairs(a), Format::Csv),
        Command::Power(a) => ("power", &a.common, flag_pairs(a), Format::Csv),
        Command::CheckCopula(a) => ("check-copula", &a.common, flag_pairs(a), Format::Csv),
        Command::Analyze(a) => ("analyze", &a.common, flag_pairs(a), Format::Json),
        Command::Combine(a) => ("combine", &a.common, flag_pairs(a), Format::Json),
    };
    let config = match &common.config {
        Some(path) => load_config(path, name)?,
        None => Default::default(),
    };
    let mut flags = flags;
    if let Some(f) = &common.format {
        flags.insert("format".into(), f.clone());
    }
    let mut s = Settings::new(config, flags);
    let workers = workers(common.workers)?;
    let format: Format = s.get("format", default_format)?;

    let artifact = match &cli.command {
        Command::CalibrateTail(_) => commands::calibrate_tail(&mut s, format, workers)?,
        Command::Size(_) => commands::size(&mut s, format, workers)?,
        Command::Power(_) => commands::power(&mut s, format, workers)?,
        Command::CheckCopula(_) => commands::check_copula(&mut s, format)?,
        Command::Analyze(_) => commands::analyze(&mut s, format, workers)?,
        Command::Combine(_) => commands::combine(&mut s, format, workers)?,
    };
    for key in s.unused() {
        eprintln!("warning: `{key}` is not used by {name}");
    }
    for w in &artifact.warnings {
        eprintln!("warning: {w}");
    }

    match &common.output {
        Some(path) => write_file(path, &artifact.body)?,
        None => print!("{}", artifact.body),
    }
    let manifest_path = common.manifest.clone().or_else(|| {
        common.output.as_ref().map(|p| {
            let mut os = p.clone().into_os_string();
            os.push(".manifest.json");
            PathBuf::from(os)
        })
    });
    if let Some(path) = manifest_path {
        let mut config = s.echo().clone();
        config.insert("command".into(), name.into());
        let manifest = Manifest {
            command: name,
            version: env!("CARGO_PKG_VERSION"),
            seed: artifact.seed,
            config: &config,
            workers: workers.get(),
            wall_time_seconds: start.elapsed().as_secs_f64(),
            artifact: common.output.as_ref().map(|p| p.display().to_string()),
            warnings: &artifact.warnings,
        };
        let json = serde_json::to_string_pretty(&manifest).map_err(|e| Fail::Runtime(e.to_string()))?;
        write_file(&path, &(json + "\n"))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
