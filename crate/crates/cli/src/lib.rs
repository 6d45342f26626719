//! Batch experiment runner for the `infbsde` solvers.
//!
//! Every subcommand reads an optional flat JSON config (`--config`), applies
//! command-line overrides, writes the resolved config to
//! `config_echo.json` in the output directory and then the result tables
//! and SVG plots. Exit codes: 0 on success, 2 on configuration errors, 1 on
//! numerical or I/O failures.
#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` deliberately rejects NaN

pub mod commands;
pub mod config;
pub mod output;
pub mod svg;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use config::{merge, parse, read_file, Override};
use output::OutDir;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(#[from] infbsde::Error),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) | CliError::Io(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "infbsde", version, about = "Infinite-horizon BSDE experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Monte Carlo Picard iteration on a space grid.
    GridSolve {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        grid: GridFlags,
    },
    /// Picard iterations with neural-network iterates.
    NnPicard {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        nn: PicardFlags,
    },
    /// Direct neural-network scheme with inner Monte Carlo averages.
    NnDirect {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        nn: DirectFlags,
    },
    /// Grid error against Ñ with M scaled as k·Ñ⁴/R⁴.
    RateStudy {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        grid: GridFlags,
        #[arg(long)]
        k: Option<f64>,
        /// Comma-separated list of Ñ values.
        #[arg(long, value_delimiter = ',')]
        ntildes: Option<Vec<usize>>,
    },
    /// Contraction constants and parameter constraints.
    Contraction {
        #[command(flatten)]
        common: Common,
        /// Samples per probe point for c∞ and c̃∞.
        #[arg(long = "M")]
        samples: Option<usize>,
        #[arg(long)]
        p: Option<f64>,
        #[arg(long)]
        r: Option<f64>,
        #[arg(long)]
        r_prime: Option<f64>,
    },
    /// Relative errors of an NN scheme over a list of K_z values.
    KzSweep {
        #[command(flatten)]
        common: Common,
        /// `nn-picard` or `nn-direct`.
        #[arg(long)]
        scheme: Option<String>,
        /// Comma-separated list of K_z values.
        #[arg(long, value_delimiter = ',')]
        kz: Option<Vec<f64>>,
        #[arg(long)]
        replications: Option<usize>,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// JSON config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Master seed (required, here or in the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Problem name (required, here or in the config).
    #[arg(long)]
    problem: Option<String>,
    #[arg(long = "d")]
    dim: Option<usize>,
    /// Problem parameter override `key=value`, e.g. `kz=0.1`; repeatable.
    #[arg(long = "set", value_parser = parse_key_value)]
    problem_params: Vec<(String, f64)>,
    #[arg(long)]
    a: Option<f64>,
    #[arg(long)]
    a_tilde: Option<f64>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    theta_tilde: Option<f64>,
    /// Euler step for non-Brownian dynamics.
    #[arg(long)]
    dt: Option<f64>,
}

#[derive(Debug, Args)]
struct GridFlags {
    #[arg(long)]
    ntilde: Option<usize>,
    #[arg(long = "R")]
    radius: Option<f64>,
    #[arg(long = "M")]
    samples: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    /// Boundary layers around the reporting region.
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    trunc_bound: Option<f64>,
    #[arg(long, requires = "trunc_bound")]
    trunc_r: Option<f64>,
}

#[derive(Debug, Args)]
struct PicardFlags {
    #[arg(long = "M")]
    samples: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    no_warm_start: bool,
}

#[derive(Debug, Args)]
struct DirectFlags {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long = "Mx")]
    points: Option<usize>,
    #[arg(long = "M")]
    inner_samples: Option<usize>,
}

fn parse_key_value(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected key=value, got `{s}`"))?;
    let v: f64 = v.trim().parse().map_err(|_| format!("`{v}` is not a number"))?;
    Ok((k.trim().to_string(), v))
}

fn push<T: Into<Value>>(out: &mut Vec<Override>, path: Vec<&'static str>, v: Option<T>) {
    if let Some(v) = v {
        out.push((path, v.into()));
    }
}

fn with_prefix(prefix: Option<&'static str>, key: &'static str) -> Vec<&'static str> {
    prefix.into_iter().chain([key]).collect()
}

impl Common {
    /// Overrides for the seed and scheme parameters; `prefix` locates the
    /// solver config inside the run config.
    fn overrides(&self, prefix: Option<&'static str>, dt_key: Option<&'static str>) -> Vec<Override> {
        let mut o = Vec::new();
        push(&mut o, vec!["seed"], self.seed);
        push(&mut o, vec!["problem"], self.problem.clone());
        push(&mut o, vec!["d"], self.dim);
        let params = |k| {
            let mut p = with_prefix(prefix, "params");
            p.push(k);
            p
        };
        push(&mut o, params("a"), self.a);
        push(&mut o, params("a_tilde"), self.a_tilde);
        push(&mut o, params("theta"), self.theta);
        push(&mut o, params("theta_tilde"), self.theta_tilde);
        if let Some(k) = dt_key {
            push(&mut o, with_prefix(prefix, k), self.dt);
        }
        o
    }
}

impl GridFlags {
    fn overrides(&self, prefix: Option<&'static str>) -> Vec<Override> {
        let mut o = Vec::new();
        push(&mut o, with_prefix(prefix, "n_half"), self.ntilde);
        push(&mut o, with_prefix(prefix, "radius"), self.radius);
        push(&mut o, with_prefix(prefix, "samples"), self.samples);
        push(&mut o, with_prefix(prefix, "iterations"), self.iters);
        push(&mut o, with_prefix(prefix, "pad"), self.p);
        if let Some(b) = self.trunc_bound {
            o.push((with_prefix(prefix, "truncation"), json!({"bound": b, "r": self.trunc_r.unwrap_or(0.0)})));
        }
        o
    }
}

/// Configures the global thread pool from `BSDE_THREADS`, once per process.
fn init_threads() {
    if let Some(n) = std::env::var("BSDE_THREADS").ok().and_then(|v| v.parse::<usize>().ok()).filter(|n| *n > 0) {
        // A second call in the same process finds the pool already built.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

/// Parses `argv` (including the program name) and executes the run.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    init_threads();
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(command: Command) -> Result<(), CliError> {
    let cfg_err = |e: infbsde::Error| CliError::Config(e.to_string());
    match command {
        Command::GridSolve { common, grid } => {
            let mut o = common.overrides(None, Some("dt"));
            o.extend(grid.overrides(None));
            let m = merge(read_file(common.config.as_deref())?, o, &common.problem_params, &[&["seed"]])?;
            let cfg: infbsde::picard_grid::GridSolveConfig = parse(&m.rest)?;
            cfg.validate().map_err(cfg_err)?;
            let problem = m.problem.build()?;
            let out = OutDir::create(&common.out)?;
            out.write("config_echo.json", &config::echo(&m.problem, &cfg)?)?;
            commands::grid_solve(&problem, &cfg, &out)
        }
        Command::NnPicard { common, nn } => {
            let mut o = common.overrides(None, Some("dt"));
            push(&mut o, vec!["samples"], nn.samples);
            push(&mut o, vec!["iterations"], nn.iters);
            push(&mut o, vec!["steps"], nn.steps);
            push(&mut o, vec!["batch_size"], nn.batch_size);
            if nn.no_warm_start {
                o.push((vec!["warm_start"], Value::Bool(false)));
            }
            let m = merge(read_file(common.config.as_deref())?, o, &common.problem_params, &[&["seed"]])?;
            let cfg: infbsde::nn_schemes::NnPicardConfig = parse(&m.rest)?;
            cfg.validate().map_err(cfg_err)?;
            let problem = m.problem.build()?;
            let out = OutDir::create(&common.out)?;
            out.write("config_echo.json", &config::echo(&m.problem, &cfg)?)?;
            commands::nn_picard(&problem, &cfg, &out)
        }
        Command::NnDirect { common, nn } => {
            let mut o = common.overrides(None, Some("dt"));
            push(&mut o, vec!["epochs"], nn.epochs);
            push(&mut o, vec!["steps_per_epoch"], nn.steps);
            push(&mut o, vec!["points"], nn.points);
            push(&mut o, vec!["inner_samples"], nn.inner_samples);
            let m = merge(read_file(common.config.as_deref())?, o, &common.problem_params, &[&["seed"]])?;
            let cfg: infbsde::nn_schemes::DirectConfig = parse(&m.rest)?;
            cfg.validate().map_err(cfg_err)?;
            let problem = m.problem.build()?;
            let out = OutDir::create(&common.out)?;
            out.write("config_echo.json", &config::echo(&m.problem, &cfg)?)?;
            commands::nn_direct(&problem, &cfg, &out)
        }
        Command::RateStudy { common, grid, k, ntildes } => {
            let mut o = common.overrides(Some("grid"), Some("dt"));
            o.extend(grid.overrides(Some("grid")));
            push(&mut o, vec!["k"], k);
            push(&mut o, vec!["ntildes"], ntildes);
            let m = merge(read_file(common.config.as_deref())?, o, &common.problem_params, &[&["seed"]])?;
            let run: commands::RateStudyRun = parse(&m.rest)?;
            let run = run.resolve()?;
            let problem = m.problem.build()?;
            let out = OutDir::create(&common.out)?;
            out.write("config_echo.json", &config::echo(&m.problem, &run)?)?;
            commands::rate_study(&problem, &run, &out)
        }
        Command::Contraction { common, samples, p, r, r_prime } => {
            let mut o = common.overrides(None, Some("dt"));
            push(&mut o, vec!["samples"], samples);
            push(&mut o, vec!["p"], p);
            push(&mut o, vec!["r"], r);
            push(&mut o, vec!["r_prime"], r_prime);
            let m = merge(read_file(common.config.as_deref())?, o, &common.problem_params, &[&["seed"]])?;
            let run: commands::ContractionRun = parse(&m.rest)?;
            let run = run.resolve(m.problem.dim)?;
            let problem = m.problem.build()?;
            let out = OutDir::create(&common.out)?;
            out.write("config_echo.json", &config::echo(&m.problem, &run)?)?;
            commands::contraction(&problem, &run, &out)
        }
        Command::KzSweep { common, scheme, kz, replications } => {
            let mut o = Vec::new();
            push(&mut o, vec!["seed"], common.seed);
            push(&mut o, vec!["problem"], common.problem.clone());
            push(&mut o, vec!["d"], common.dim);
            push(&mut o, vec!["scheme"], scheme);
            push(&mut o, vec!["kz"], kz);
            push(&mut o, vec!["replications"], replications);
            for prefix in ["picard", "direct"] {
                o.extend(common.overrides(Some(prefix), Some("dt")).into_iter().filter(|(p, _)| p.len() > 1));
            }
            let m = merge(read_file(common.config.as_deref())?, o, &common.problem_params, &[&["seed"]])?;
            let run: commands::KzSweepRun = parse(&m.rest)?;
            let run = run.resolve()?;
            // Fail on an unusable problem before any output is written.
            m.problem.build()?;
            let out = OutDir::create(&common.out)?;
            out.write("config_echo.json", &config::echo(&m.problem, &run)?)?;
            commands::kz_sweep(&m.problem, &run, &out)
        }
    }
}
