//! Command-line experiment runner.
//!
//! Every subcommand reads one JSON config, runs its pipeline entirely in memory
//! and only then writes `report.json` plus CSV tables: first into a hidden
//! sibling directory, then renamed into the output directory. The exit code is
//! 0 when every check passes, 1 when some check fails and 2 on errors.

pub mod config;
pub mod experiments;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::error::{Error, Result};
use config::{ExperimentConfig, Kind};
use experiments::Check;

pub const OUT_ENV: &str = "RETARDED_OU_OUT";

#[derive(Parser, Debug)]
#[command(name = "retarded-ou", version, about = "Retarded Ornstein-Uhlenbeck experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Green table by method of steps, checked against the Volterra series.
    Green(RunArgs),
    /// Stochastic convolution ensemble and the Itô isometry.
    Simulate(RunArgs),
    /// Hölder exponent of the stochastic convolution and of (−A)^γ of it.
    Regularity(RunArgs),
    /// Monte Carlo maximal-inequality ratio under grid refinement.
    Bdg(RunArgs),
    /// Yosida approximation of the Green table and the stochastic convolution.
    Yosida(RunArgs),
    /// Classical solution of the delayed equation and its residual.
    Deterministic(RunArgs),
}

#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    /// JSON experiment config.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (overrides the environment and the config).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Master seed (overrides `noise.seed`).
    #[arg(long)]
    pub seed: Option<u64>,
}

impl Command {
    fn split(&self) -> (Kind, &RunArgs) {
        match self {
            Command::Green(a) => (Kind::Green, a),
            Command::Simulate(a) => (Kind::Simulate, a),
            Command::Regularity(a) => (Kind::Regularity, a),
            Command::Bdg(a) => (Kind::Bdg, a),
            Command::Yosida(a) => (Kind::Yosida, a),
            Command::Deterministic(a) => (Kind::Deterministic, a),
        }
    }
}

#[derive(Serialize)]
struct Report<'a> {
    kind: &'static str,
    seed: u64,
    pass: bool,
    #[serde(rename = "paper_checks")]
    checks: &'a [Check],
    config: &'a ExperimentConfig,
    #[serde(flatten)]
    body: &'a serde_json::Value,
}

/// Result of a completed run.
#[derive(Debug)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub checks: Vec<Check>,
}

impl RunSummary {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

fn resolve_out(args: &RunArgs, cfg: &ExperimentConfig) -> Result<PathBuf> {
    args.out
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .or_else(|| cfg.output.clone())
        .ok_or_else(|| Error::Config(format!("no output directory: pass --out, set {OUT_ENV} or set `output`")))
}

/// Runs one experiment and writes its report files.
pub fn run_experiment(kind: Kind, args: &RunArgs) -> Result<RunSummary> {
    let text = fs::read_to_string(&args.config)?;
    let mut cfg = ExperimentConfig::from_json(&text)?;
    if let Some(seed) = args.seed {
        cfg.noise.seed = seed;
    }
    let out = resolve_out(args, &cfg)?;
    let built = cfg.validate(kind)?;
    let outcome = experiments::run(kind, &cfg, &built)?;
    let report = Report {
        kind: kind.name(),
        seed: cfg.noise.seed,
        pass: outcome.checks.iter().all(|c| c.pass),
        checks: &outcome.checks,
        config: &cfg,
        body: &outcome.body,
    };
    let mut json = serde_json::to_vec_pretty(&report).map_err(|e| Error::Parse(e.to_string()))?;
    json.push(b'\n');
    let mut files = vec![("report.json".to_string(), json)];
    files.extend(outcome.tables);
    write_atomic(&out, &files)?;
    Ok(RunSummary {
        out_dir: out,
        checks: outcome.checks,
    })
}

/// Writes `files` into a hidden sibling of `out`, then renames them into `out`.
pub fn write_atomic(out: &Path, files: &[(String, Vec<u8>)]) -> Result<()> {
    let parent = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&parent)?;
    let name = out
        .file_name()
        .ok_or_else(|| Error::Config(format!("output path {} has no final component", out.display())))?;
    let tmp = parent.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    if tmp.exists() {
        fs::remove_dir_all(&tmp)?;
    }
    fs::create_dir(&tmp)?;
    let staged = (|| -> Result<()> {
        for (file, bytes) in files {
            fs::write(tmp.join(file), bytes)?;
        }
        fs::create_dir_all(out)?;
        for (file, _) in files {
            fs::rename(tmp.join(file), out.join(file))?;
        }
        Ok(())
    })();
    let cleanup = fs::remove_dir_all(&tmp);
    staged?;
    cleanup?;
    Ok(())
}

/// Parses arguments, runs, reports to stderr and returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let (kind, args) = cli.command.split();
    match run_experiment(kind, args) {
        Ok(summary) => {
            for c in &summary.checks {
                eprintln!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            eprintln!("report written to {}", summary.out_dir.display());
            if summary.passed() {
                0
            } else {
                let failed: Vec<&str> = summary.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
                eprintln!("failed checks: {}", failed.join(", "));
                1
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}
