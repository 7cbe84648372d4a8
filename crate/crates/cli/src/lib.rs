//! Command-line front end: scenario runs, trust-factor tables and curves,
//! and parallel parameter sweeps.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use bhs_core::config::parse_override;
use bhs_core::metrics::{format_f64, reports_to_csv};
use bhs_core::trust::TrustError;
use bhs_core::{compute_tf, ConfigError, FaultTolerance, MetricsReport, RunError, ScenarioConfig};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Default streak lengths for `table`.
pub const TABLE_ROWS: [u32; 15] = [1, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100, 200, 300, 500, 1000];

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_INVALID: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "bhs",
    version,
    about = "Black-hole detection simulator for clustered sensor networks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one scenario and write report.json, events.log and config.toml.
    Run(RunArgs),
    /// Trust factor for selected streak lengths.
    Table(TableArgs),
    /// Trust factor for every streak length from 0 to --n-max.
    Curve(CurveArgs),
    /// Run a scenario over a grid of x, ttf and seed values.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Output directory.
    #[arg(long, env = "BHS_OUT")]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Dotted key=value, applied before validation. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct TableArgs {
    #[arg(long, default_value_t = 0.95)]
    pub x: f64,
    /// Streak lengths, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = TABLE_ROWS)]
    pub n: Vec<u32>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct CurveArgs {
    #[arg(long, default_value_t = 0.95)]
    pub x: f64,
    #[arg(long, default_value_t = 100)]
    pub n_max: u32,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// TOML file with `x`, `ttf` and `seed` arrays.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    /// x values, comma separated. Replaces the grid file's list.
    #[arg(long, value_delimiter = ',')]
    pub x: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub ttf: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub seed: Vec<u64>,
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(flatten)]
    pub common: Common,
}

/// Bad user input that is not a scenario validation error.
#[derive(Debug)]
pub struct InvalidInput(pub String);

impl fmt::Display for InvalidInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InvalidInput {}

/// Maps an error to the process exit code.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    let invalid = err.chain().any(|e| {
        e.is::<ConfigError>()
            || e.is::<TrustError>()
            || e.is::<InvalidInput>()
            || matches!(e.downcast_ref::<RunError>(), Some(RunError::Config(_)))
    });
    if invalid {
        EXIT_INVALID
    } else {
        EXIT_INTERNAL
    }
}

/// Executes a parsed command and returns what goes to stdout.
pub fn execute(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Run(a) => cmd_run(&a),
        Command::Table(a) => {
            let rows = table_rows(a.x, &a.n)?;
            emit(&a.common, "table", render_rows(&rows, a.common.format))
        }
        Command::Curve(a) => {
            let rows = curve_rows(a.x, a.n_max)?;
            emit(&a.common, "curve", render_rows(&rows, a.common.format))
        }
        Command::Sweep(a) => cmd_sweep(&a),
    }
}

fn emit(common: &Common, stem: &str, body: String) -> Result<String> {
    if let Some(dir) = &common.out {
        let ext = match common.format.unwrap_or(Format::Csv) {
            Format::Csv => "csv",
            Format::Json => "json",
        };
        write_file(dir, &format!("{stem}.{ext}"), &body)?;
    }
    Ok(body)
}

fn write_file(dir: &Path, name: &str, body: &str) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, body).with_context(|| format!("writing {}", path.display()))
}

fn read_config(path: &Path, overrides: &[String]) -> Result<ScenarioConfig> {
    let text = fs::read_to_string(path).map_err(|e| InvalidInput(format!("cannot read {}: {e}", path.display())))?;
    let pairs = overrides
        .iter()
        .map(|o| parse_override(o))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ScenarioConfig::from_toml_with_overrides(&text, &pairs)?)
}

fn default_out() -> PathBuf {
    PathBuf::from("bhs-out")
}

pub fn cmd_run(a: &RunArgs) -> Result<String> {
    let mut cfg = read_config(&a.config, &a.overrides)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let scenario = cfg.validate()?;
    for w in &scenario.warnings {
        eprintln!("warning: {w}");
    }
    let out = bhs_core::run_scenario(&scenario)?;
    let dir = a.common.out.clone().unwrap_or_else(default_out);
    write_file(&dir, "config.toml", &cfg.to_canonical_toml())?;
    write_file(&dir, "events.log", &out.log_text())?;
    write_file(&dir, "report.json", &out.report.to_json())?;
    Ok(match a.common.format.unwrap_or(Format::Json) {
        Format::Json => out.report.to_json(),
        Format::Csv => reports_to_csv(&[], &[(Vec::new(), out.report)]),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TfRow {
    pub n: u32,
    pub tf: f64,
}

pub fn table_rows(x: f64, ns: &[u32]) -> Result<Vec<TfRow>> {
    let fx = FaultTolerance::new(x)?;
    if ns.is_empty() {
        return Err(InvalidInput("--n needs at least one value".into()).into());
    }
    Ok(ns
        .iter()
        .map(|&n| TfRow {
            n,
            tf: compute_tf(fx, n),
        })
        .collect())
}

pub fn curve_rows(x: f64, n_max: u32) -> Result<Vec<TfRow>> {
    if n_max < 1 {
        return Err(InvalidInput("--n-max must be at least 1".into()).into());
    }
    let ns: Vec<u32> = (0..=n_max).collect();
    table_rows(x, &ns)
}

pub fn render_rows(rows: &[TfRow], format: Option<Format>) -> String {
    match format.unwrap_or(Format::Csv) {
        Format::Csv => {
            let mut s = String::from("n,tf\n");
            for r in rows {
                s.push_str(&format!("{},{}\n", r.n, format_f64(r.tf)));
            }
            s
        }
        Format::Json => {
            let mut s = serde_json::to_string_pretty(rows).expect("rows serialize");
            s.push('\n');
            s
        }
    }
}

/// Value lists for a sweep. Empty lists fall back to the scenario's value.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    #[serde(default)]
    pub x: Vec<f64>,
    #[serde(default)]
    pub ttf: Vec<f64>,
    #[serde(default)]
    pub seed: Vec<u64>,
}

impl Grid {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| InvalidInput(format!("bad sweep grid: {e}")).into())
    }

    /// Every (x, ttf, seed) combination, x outermost, in listed order.
    pub fn points(&self, base: &ScenarioConfig) -> Vec<(f64, f64, u64)> {
        let or = |v: &[f64], d: f64| if v.is_empty() { vec![d] } else { v.to_vec() };
        let xs = or(&self.x, base.x);
        let ttfs = or(&self.ttf, base.ttf);
        let seeds = if self.seed.is_empty() {
            vec![base.seed]
        } else {
            self.seed.clone()
        };
        let mut pts = Vec::new();
        for &x in &xs {
            for &t in &ttfs {
                for &s in &seeds {
                    pts.push((x, t, s));
                }
            }
        }
        pts
    }
}

#[derive(Debug, Serialize)]
pub struct SweepRow {
    pub x: f64,
    pub ttf: f64,
    pub seed: u64,
    pub report: MetricsReport,
}

/// Runs every grid point in parallel; rows come back in grid order.
pub fn run_sweep(base: &ScenarioConfig, grid: &Grid) -> Result<Vec<SweepRow>> {
    let results: Vec<(ScenarioConfig, Result<MetricsReport, RunError>)> = grid
        .points(base)
        .into_par_iter()
        .map(|(x, ttf, seed)| {
            let cfg = ScenarioConfig {
                x,
                ttf,
                seed,
                ..base.clone()
            };
            let r = bhs_core::run(&cfg).map(|o| o.report);
            (cfg, r)
        })
        .collect();
    let mut rows = Vec::with_capacity(results.len());
    for (cfg, r) in results {
        let report = r.with_context(|| {
            format!(
                "sweep point x={} ttf={} seed={} failed; its configuration:\n{}",
                format_f64(cfg.x),
                format_f64(cfg.ttf),
                cfg.seed,
                cfg.to_canonical_toml()
            )
        })?;
        rows.push(SweepRow {
            x: cfg.x,
            ttf: cfg.ttf,
            seed: cfg.seed,
            report,
        });
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let flat: Vec<(Vec<String>, MetricsReport)> = rows
        .iter()
        .map(|r| {
            (
                vec![format_f64(r.x), format_f64(r.ttf), r.seed.to_string()],
                r.report.clone(),
            )
        })
        .collect();
    reports_to_csv(&["x", "ttf", "seed"], &flat)
}

pub fn cmd_sweep(a: &SweepArgs) -> Result<String> {
    let base = read_config(&a.config, &a.overrides)?;
    let mut grid = match &a.grid {
        Some(p) => Grid::from_toml_str(
            &fs::read_to_string(p).map_err(|e| InvalidInput(format!("cannot read {}: {e}", p.display())))?,
        )?,
        None => Grid::default(),
    };
    if !a.x.is_empty() {
        grid.x = a.x.clone();
    }
    if !a.ttf.is_empty() {
        grid.ttf = a.ttf.clone();
    }
    if !a.seed.is_empty() {
        grid.seed = a.seed.clone();
    }
    let rows = run_sweep(&base, &grid)?;
    let format = a.common.format.unwrap_or(Format::Csv);
    let body = match format {
        Format::Csv => sweep_csv(&rows),
        Format::Json => {
            let mut s = serde_json::to_string_pretty(&rows).expect("rows serialize");
            s.push('\n');
            s
        }
    };
    let dir = a.common.out.clone().unwrap_or_else(default_out);
    let name = match format {
        Format::Csv => "sweep.csv",
        Format::Json => "sweep.json",
    };
    write_file(&dir, name, &body)?;
    Ok(body)
}
