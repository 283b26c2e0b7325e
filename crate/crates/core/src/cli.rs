//! Command-line driver for the `gw` binary: flag and `run.json` parsing,
//! input validation, atomic output files and the JSON provenance echo.
//!
//! Conventions:
//! - primary output goes to `--output` (temp file + rename) or stdout;
//! - the provenance header, summaries and error records go to stderr as
//!   single-line JSON;
//! - exit code 2 for configuration problems, 1 for failures while running;
//! - floats are written with 17 significant digits, non-finite values as
//!   `null` in JSON.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::graph_match::{exhaustive_search_problem, relaxed_matching_problem, MatchResult, EXHAUSTIVE_CAP};
use crate::graph_model::{embed, embed_with_index, GraphDistribution};
use crate::gw_solver::{
    default_starts, entropic_uniqueness_margin, random_starts, solve_problem, GwProblem, SolveReport,
    DEFAULT_GW_MAX_ITER, DEFAULT_GW_TOL,
};
use crate::hypothesis_test::{
    bootstrap_entropic, error_sweep, iso_test, ks_normal_fit, limit_histogram, rep_draw_seed, sample_pair,
    ErrorSweep, MatchMode, SweepConfig,
};
use crate::limit_sampler::{build_polytope, quantile, sample_ln, CostGaussianSpec, DEFAULT_DELTA, DEFAULT_DRAWS};
use crate::measures::DiscreteMeasure;

pub const SCHEMA: u32 = 1;
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const EXIT_MODULE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
const QUANTILE_GRID: [f64; 9] = [0.01, 0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95, 0.99];

/// `x` with 17 significant digits, trailing zeros trimmed.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0.0".into() } else { "0.0".into() };
    }
    let sci = format!("{x:.16e}");
    let (mant, exp) = sci.split_once('e').expect("exponent present");
    let e: i32 = exp.parse().expect("integer exponent");
    if (-5..17).contains(&e) {
        let prec = (16 - e).max(0) as usize;
        let mut t = format!("{x:.prec$}");
        if t.contains('.') {
            while t.ends_with('0') {
                t.pop();
            }
            if t.ends_with('.') {
                t.push('0');
            }
        } else {
            t.push_str(".0");
        }
        t
    } else {
        let mut m = mant.to_string();
        if m.contains('.') {
            while m.ends_with('0') {
                m.pop();
            }
            if m.ends_with('.') {
                m.pop();
            }
        }
        format!("{m}e{e}")
    }
}

struct Fmt17;

impl serde_json::ser::Formatter for Fmt17 {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, v: f64) -> io::Result<()> {
        w.write_all(fmt_f64(v).as_bytes())
    }

    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, v: f32) -> io::Result<()> {
        w.write_all(fmt_f64(v as f64).as_bytes())
    }
}

/// Compact JSON with 17-digit floats.
pub fn to_json<T: Serialize + ?Sized>(v: &T) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Fmt17);
    v.serialize(&mut ser).expect("serialization to memory cannot fail");
    String::from_utf8(buf).expect("JSON is UTF-8")
}

/// Write `contents` to `path` through a sibling temp file and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let io_err = |e: io::Error| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::Io {
            path: path.display().to_string(),
            message: "not a file path".into(),
        })?
        .to_string_lossy();
    let tmp = path.with_file_name(format!(".{name}.tmp.{}", std::process::id()));
    let res = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if res.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    res.map_err(io_err)
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn report_json(r: &SolveReport) -> Value {
    json!({
        "value": r.value,
        "phi_value": r.phi_value,
        "s1": r.value - r.phi_value,
        "subgrad_norm": r.subgrad_norm,
        "iterations": r.iterations,
        "converged": r.converged,
        "marginal_residual": r.plan.marginal_residual(),
        "a_opt": rows(&r.a_opt),
        "plan": rows(r.plan.plan()),
    })
}

fn match_json(m: &MatchResult) -> Value {
    json!({
        "permutation": m.permutation,
        "relaxed_matrix": rows(&m.relaxed_matrix),
        "relaxed_residual": m.relaxed_residual,
        "projected_residual": m.projected_residual,
        "certificate": {
            "delta": m.certificate.delta,
            "epsilon": m.certificate.epsilon,
            "threshold": m.certificate.threshold,
            "holds": m.certificate.holds,
        },
    })
}

/// `"a/b"` or a plain float.
fn parse_fraction(s: &str) -> std::result::Result<f64, String> {
    let s = s.trim();
    if let Some((a, b)) = s.split_once('/') {
        let a: f64 = a.trim().parse().map_err(|e| format!("{s:?}: {e}"))?;
        let b: f64 = b.trim().parse().map_err(|e| format!("{s:?}: {e}"))?;
        return Ok(a / b);
    }
    s.parse().map_err(|e| format!("{s:?}: {e}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum CommandName {
    Compute,
    Match,
    LimitSample,
    TestIso,
    Sweep,
    Bootstrap,
    Histogram,
}

impl CommandName {
    fn name(self) -> &'static str {
        match self {
            CommandName::Compute => "compute",
            CommandName::Match => "match",
            CommandName::LimitSample => "limit-sample",
            CommandName::TestIso => "test-iso",
            CommandName::Sweep => "sweep",
            CommandName::Bootstrap => "bootstrap",
            CommandName::Histogram => "histogram",
        }
    }
}

/// Every tunable of every command. Values come from `--config` first and
/// are then overridden by explicit flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schema: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub command: Option<CommandName>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu0: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu1: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub measure: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model0: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model1: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub starts: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub draws: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_grid: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_grid: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prune: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

macro_rules! overlay_fields {
    ($base:expr, $over:expr; $($f:ident),*) => {
        RunConfig { $($f: $over.$f.or($base.$f)),* }
    };
}

impl RunConfig {
    /// Fields set in `over` win.
    pub fn overlay(self, over: RunConfig) -> RunConfig {
        overlay_fields!(self, over; schema, command, mu0, mu1, measure, model0, model1, eps, starts, mode,
            draws, delta, n, alpha, n_grid, alpha_grid, reps, b, tol, max_iter, prune, seed, output, format,
            threads)
    }

    /// Read a `run.json`; relative paths are taken relative to its directory.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = read_file(path)?;
        let mut cfg: RunConfig = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        if cfg.schema.unwrap_or(SCHEMA) != SCHEMA {
            return Err(Error::Parse {
                path: path.display().to_string(),
                message: format!("unsupported config schema {}", cfg.schema.unwrap_or(0)),
            });
        }
        let dir = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.mu0,
            &mut cfg.mu1,
            &mut cfg.measure,
            &mut cfg.model0,
            &mut cfg.model1,
            &mut cfg.output,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        Ok(cfg)
    }

    fn fill_defaults(&mut self, cmd: CommandName) {
        self.schema = Some(SCHEMA);
        self.command = Some(cmd);
        use CommandName::*;
        let fmt = match cmd {
            Compute | Match | TestIso => Format::Json,
            _ => Format::Csv,
        };
        self.format.get_or_insert(fmt);
        match cmd {
            Compute => {
                self.eps.get_or_insert(0.0);
                self.starts.get_or_insert_with(|| "default".into());
                self.tol.get_or_insert(DEFAULT_GW_TOL);
                self.max_iter.get_or_insert(DEFAULT_GW_MAX_ITER);
            }
            Match | Histogram => {
                self.mode.get_or_insert_with(|| "exhaustive".into());
                if cmd == Histogram {
                    self.n.get_or_insert(1000);
                    self.reps.get_or_insert(500);
                }
            }
            LimitSample => {
                self.mode.get_or_insert_with(|| "plain".into());
                self.draws.get_or_insert(DEFAULT_DRAWS);
                self.delta.get_or_insert(DEFAULT_DELTA);
            }
            TestIso => {
                self.mode.get_or_insert_with(|| "exhaustive".into());
                self.n.get_or_insert(1000);
                self.alpha.get_or_insert(0.1);
                self.draws.get_or_insert(DEFAULT_DRAWS);
            }
            Sweep => {
                self.mode.get_or_insert_with(|| "exhaustive".into());
                self.n_grid.get_or_insert_with(|| vec![100, 500, 1000]);
                self.alpha_grid.get_or_insert_with(|| (0..9).map(|k| k as f64 / 9.0).collect());
                self.reps.get_or_insert(100);
                self.draws.get_or_insert(DEFAULT_DRAWS);
            }
            Bootstrap => {
                self.b.get_or_insert(300);
            }
        }
    }
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = read_file(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

#[derive(Debug, Parser)]
#[command(name = "gw", version, about = "Gromov-Wasserstein distances and graph isomorphism testing")]
pub struct Cli {
    /// JSON run configuration; explicit flags override its fields
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Random seed (required, here or in --config)
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file, written atomically [default: stdout]
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    /// Output format [default: json for compute/match/test-iso, csv otherwise]
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Worker threads; the GW_THREADS environment variable takes precedence [default: all cores]
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Commands,
}

#[derive(Debug, Subcommand)]
pub enum Commands {
    /// Squared GW (or entropic GW) distance between two measures
    Compute(ComputeArgs),
    /// Match two graph models and solve from the matched warm start
    Match(MatchArgs),
    /// Draws from the null limit law
    LimitSample(LimitArgs),
    /// Two-sample isomorphism test on graphs sampled from two models
    TestIso(TestIsoArgs),
    /// Type-1 / type-2 error rates over an (n, alpha) grid
    Sweep(SweepArgs),
    /// Bootstrap of the entropic GW distance
    Bootstrap(BootstrapArgs),
    /// Repeated test statistics for histograms
    Histogram(HistogramArgs),
}

#[derive(Debug, Args)]
pub struct ComputeArgs {
    /// First measure (JSON)
    #[arg(long)]
    pub mu0: Option<PathBuf>,
    /// Second measure (JSON)
    #[arg(long)]
    pub mu1: Option<PathBuf>,
    /// Entropic regularization; 0 for the unregularized distance [default: 0]
    #[arg(long)]
    pub eps: Option<f64>,
    /// default | exhaustive | random:K [default: default]
    #[arg(long)]
    pub starts: Option<String>,
    /// Stopping tolerance on the subgradient norm [default: 1e-7]
    #[arg(long)]
    pub tol: Option<f64>,
    /// Iteration cap per start [default: 50000]
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Drop atoms with weight below this threshold and renormalize [default: no pruning]
    #[arg(long)]
    pub prune: Option<f64>,
}

#[derive(Debug, Args)]
pub struct MatchArgs {
    /// First graph model (JSON)
    #[arg(long)]
    pub model0: Option<PathBuf>,
    /// Second graph model (JSON)
    #[arg(long)]
    pub model1: Option<PathBuf>,
    /// exhaustive | relaxed [default: exhaustive]
    #[arg(long)]
    pub mode: Option<String>,
}

#[derive(Debug, Args)]
pub struct LimitArgs {
    /// Measure (plain mode) or graph model (graph mode), JSON
    #[arg(long)]
    pub measure: Option<PathBuf>,
    /// plain | graph [default: plain]
    #[arg(long)]
    pub mode: Option<String>,
    /// Number of draws [default: 200]
    #[arg(long)]
    pub draws: Option<usize>,
    /// Box half-width on the first coordinate [default: 1]
    #[arg(long)]
    pub delta: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TestIsoArgs {
    /// Null graph model (JSON)
    #[arg(long)]
    pub model0: Option<PathBuf>,
    /// Second graph model (JSON)
    #[arg(long)]
    pub model1: Option<PathBuf>,
    /// Graphs sampled from each model [default: 1000]
    #[arg(long)]
    pub n: Option<usize>,
    /// Level, e.g. 0.1 or 1/9 [default: 0.1]
    #[arg(long, value_parser = parse_fraction)]
    pub alpha: Option<f64>,
    /// Limit-law draws for the critical value [default: 200]
    #[arg(long)]
    pub draws: Option<usize>,
    /// exhaustive | relaxed [default: exhaustive]
    #[arg(long)]
    pub mode: Option<String>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Null graph model (JSON)
    #[arg(long)]
    pub model0: Option<PathBuf>,
    /// Alternative model (JSON); type-2 columns are empty without it
    #[arg(long)]
    pub model1: Option<PathBuf>,
    /// Comma-separated sample sizes [default: 100,500,1000]
    #[arg(long, value_delimiter = ',')]
    pub n_grid: Option<Vec<usize>>,
    /// Comma-separated levels, fractions allowed [default: 0,1/9,...,8/9]
    #[arg(long, value_delimiter = ',', value_parser = parse_fraction)]
    pub alpha_grid: Option<Vec<f64>>,
    /// Repetitions per cell [default: 100]
    #[arg(long)]
    pub reps: Option<usize>,
    /// Limit-law draws per test [default: 200]
    #[arg(long)]
    pub draws: Option<usize>,
    /// exhaustive | relaxed [default: exhaustive]
    #[arg(long)]
    pub mode: Option<String>,
}

#[derive(Debug, Args)]
pub struct BootstrapArgs {
    /// First empirical measure (JSON)
    #[arg(long)]
    pub mu0: Option<PathBuf>,
    /// Second empirical measure (JSON)
    #[arg(long)]
    pub mu1: Option<PathBuf>,
    /// Entropic regularization (required)
    #[arg(long)]
    pub eps: Option<f64>,
    /// Points resampled per replicate [default: number of atoms of --mu0]
    #[arg(long)]
    pub n: Option<usize>,
    /// Replicates [default: 300]
    #[arg(long)]
    pub b: Option<usize>,
}

#[derive(Debug, Args)]
pub struct HistogramArgs {
    /// First graph model (JSON)
    #[arg(long)]
    pub model0: Option<PathBuf>,
    /// Second graph model (JSON)
    #[arg(long)]
    pub model1: Option<PathBuf>,
    /// Graphs per sample [default: 1000]
    #[arg(long)]
    pub n: Option<usize>,
    /// Repetitions [default: 500]
    #[arg(long)]
    pub reps: Option<usize>,
    /// exhaustive | relaxed [default: exhaustive]
    #[arg(long)]
    pub mode: Option<String>,
}

impl Cli {
    fn command_name(&self) -> CommandName {
        match &self.command {
            Commands::Compute(_) => CommandName::Compute,
            Commands::Match(_) => CommandName::Match,
            Commands::LimitSample(_) => CommandName::LimitSample,
            Commands::TestIso(_) => CommandName::TestIso,
            Commands::Sweep(_) => CommandName::Sweep,
            Commands::Bootstrap(_) => CommandName::Bootstrap,
            Commands::Histogram(_) => CommandName::Histogram,
        }
    }

    /// Flags given on the command line, as a config overlay.
    fn flags(&self) -> RunConfig {
        let mut c = RunConfig {
            seed: self.seed,
            output: self.output.clone(),
            format: self.format,
            threads: self.threads,
            ..Default::default()
        };
        match &self.command {
            Commands::Compute(a) => {
                c.mu0 = a.mu0.clone();
                c.mu1 = a.mu1.clone();
                c.eps = a.eps;
                c.starts = a.starts.clone();
                c.tol = a.tol;
                c.max_iter = a.max_iter;
                c.prune = a.prune;
            }
            Commands::Match(a) => {
                c.model0 = a.model0.clone();
                c.model1 = a.model1.clone();
                c.mode = a.mode.clone();
            }
            Commands::LimitSample(a) => {
                c.measure = a.measure.clone();
                c.mode = a.mode.clone();
                c.draws = a.draws;
                c.delta = a.delta;
            }
            Commands::TestIso(a) => {
                c.model0 = a.model0.clone();
                c.model1 = a.model1.clone();
                c.n = a.n;
                c.alpha = a.alpha;
                c.draws = a.draws;
                c.mode = a.mode.clone();
            }
            Commands::Sweep(a) => {
                c.model0 = a.model0.clone();
                c.model1 = a.model1.clone();
                c.n_grid = a.n_grid.clone();
                c.alpha_grid = a.alpha_grid.clone();
                c.reps = a.reps;
                c.draws = a.draws;
                c.mode = a.mode.clone();
            }
            Commands::Bootstrap(a) => {
                c.mu0 = a.mu0.clone();
                c.mu1 = a.mu1.clone();
                c.eps = a.eps;
                c.n = a.n;
                c.b = a.b;
            }
            Commands::Histogram(a) => {
                c.model0 = a.model0.clone();
                c.model1 = a.model1.clone();
                c.n = a.n;
                c.reps = a.reps;
                c.mode = a.mode.clone();
            }
        }
        c
    }
}

/// Resolve flags and `--config` into a complete [`RunConfig`].
pub fn resolve(cli: &Cli) -> Result<RunConfig> {
    let cmd = cli.command_name();
    let base = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(c) = base.command {
        if c != cmd {
            return Err(Error::InvalidArgument(format!(
                "config is for `{}`, not `{}`",
                c.name(),
                cmd.name()
            )));
        }
    }
    let mut cfg = base.overlay(cli.flags());
    cfg.fill_defaults(cmd);
    Ok(cfg)
}

/// Validated inputs of one command.
pub enum Job {
    Compute {
        mu0: DiscreteMeasure,
        mu1: DiscreteMeasure,
        eps: f64,
        starts: Starts,
        tol: f64,
        max_iter: usize,
    },
    Match {
        gd0: GraphDistribution,
        gd1: GraphDistribution,
        mode: MatchMode,
    },
    LimitPlain {
        mu: DiscreteMeasure,
        draws: usize,
        delta: f64,
    },
    LimitGraph {
        gd: GraphDistribution,
        draws: usize,
        delta: f64,
    },
    TestIso {
        gd0: GraphDistribution,
        gd1: GraphDistribution,
        n: usize,
        alpha: f64,
        draws: usize,
        mode: MatchMode,
    },
    Sweep {
        gd0: GraphDistribution,
        gd1: Option<GraphDistribution>,
        cfg: SweepConfig,
    },
    Bootstrap {
        mu0: DiscreteMeasure,
        mu1: DiscreteMeasure,
        eps: f64,
        n: usize,
        b: usize,
    },
    Histogram {
        gd0: GraphDistribution,
        gd1: GraphDistribution,
        n: usize,
        reps: usize,
        mode: MatchMode,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Starts {
    Default,
    Exhaustive,
    Random(usize),
}

impl std::str::FromStr for Starts {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "default" => Ok(Starts::Default),
            "exhaustive" => Ok(Starts::Exhaustive),
            _ => s
                .strip_prefix("random:")
                .and_then(|k| k.parse().ok())
                .filter(|&k| k > 0)
                .map(Starts::Random)
                .ok_or_else(|| Error::InvalidArgument(format!("bad --starts {s:?}; use default, exhaustive or random:K"))),
        }
    }
}

fn need<T: Clone>(v: &Option<T>, flag: &str) -> Result<T> {
    v.clone().ok_or_else(|| Error::InvalidArgument(format!("missing required --{flag}")))
}

fn positive(v: usize, flag: &str) -> Result<usize> {
    if v == 0 {
        return Err(Error::InvalidArgument(format!("--{flag} must be at least 1")));
    }
    Ok(v)
}

fn alpha_ok(a: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&a) {
        return Err(Error::InvalidArgument(format!("alpha must lie in [0, 1), got {a}")));
    }
    Ok(a)
}

fn load_measure(path: &Path, prune: Option<f64>) -> Result<DiscreteMeasure> {
    let m: DiscreteMeasure = load_json(path)?;
    match prune {
        Some(t) => m.prune(t),
        None => Ok(m),
    }
}

/// Check every path and value and load the inputs.
pub fn validate(cfg: &RunConfig) -> Result<Job> {
    let cmd = cfg.command.ok_or_else(|| Error::InvalidArgument("no command".into()))?;
    if cfg.seed.is_none() {
        return Err(Error::InvalidArgument("missing required --seed".into()));
    }
    let model = |p: &Option<PathBuf>, flag: &str| -> Result<GraphDistribution> { load_json(&need(p, flag)?) };
    let mode = |s: &Option<String>| -> Result<MatchMode> { need(s, "mode")?.parse() };
    Ok(match cmd {
        CommandName::Compute => {
            let eps = need(&cfg.eps, "eps")?;
            if !(eps >= 0.0 && eps.is_finite()) {
                return Err(Error::InvalidArgument(format!("--eps must be nonnegative, got {eps}")));
            }
            Job::Compute {
                mu0: load_measure(&need(&cfg.mu0, "mu0")?, cfg.prune)?,
                mu1: load_measure(&need(&cfg.mu1, "mu1")?, cfg.prune)?,
                eps,
                starts: need(&cfg.starts, "starts")?.parse()?,
                tol: need(&cfg.tol, "tol")?,
                max_iter: positive(need(&cfg.max_iter, "max-iter")?, "max-iter")?,
            }
        }
        CommandName::Match => Job::Match {
            gd0: model(&cfg.model0, "model0")?,
            gd1: model(&cfg.model1, "model1")?,
            mode: mode(&cfg.mode)?,
        },
        CommandName::LimitSample => {
            let path = need(&cfg.measure, "measure")?;
            let draws = positive(need(&cfg.draws, "draws")?, "draws")?;
            let delta = need(&cfg.delta, "delta")?;
            if !(delta > 0.0 && delta.is_finite()) {
                return Err(Error::InvalidArgument(format!("--delta must be positive, got {delta}")));
            }
            match need(&cfg.mode, "mode")?.as_str() {
                "plain" => Job::LimitPlain {
                    mu: load_measure(&path, cfg.prune)?,
                    draws,
                    delta,
                },
                "graph" => Job::LimitGraph {
                    gd: load_json(&path)?,
                    draws,
                    delta,
                },
                other => return Err(Error::InvalidArgument(format!("unknown mode {other:?}; use plain or graph"))),
            }
        }
        CommandName::TestIso => Job::TestIso {
            gd0: model(&cfg.model0, "model0")?,
            gd1: model(&cfg.model1, "model1")?,
            n: positive(need(&cfg.n, "n")?, "n")?,
            alpha: alpha_ok(need(&cfg.alpha, "alpha")?)?,
            draws: positive(need(&cfg.draws, "draws")?, "draws")?,
            mode: mode(&cfg.mode)?,
        },
        CommandName::Sweep => {
            let n_grid = need(&cfg.n_grid, "n-grid")?;
            let alpha_grid = need(&cfg.alpha_grid, "alpha-grid")?;
            if n_grid.is_empty() || alpha_grid.is_empty() || n_grid.contains(&0) {
                return Err(Error::InvalidArgument("grids must be nonempty with positive sizes".into()));
            }
            alpha_grid.iter().try_for_each(|&a| alpha_ok(a).map(|_| ()))?;
            Job::Sweep {
                gd0: model(&cfg.model0, "model0")?,
                gd1: match &cfg.model1 {
                    Some(p) => Some(load_json(p)?),
                    None => None,
                },
                cfg: SweepConfig {
                    n_grid,
                    alpha_grid,
                    reps: positive(need(&cfg.reps, "reps")?, "reps")?,
                    draws: positive(need(&cfg.draws, "draws")?, "draws")?,
                    mode: mode(&cfg.mode)?,
                },
            }
        }
        CommandName::Bootstrap => {
            let eps = need(&cfg.eps, "eps")?;
            if !(eps > 0.0 && eps.is_finite()) {
                return Err(Error::InvalidArgument(format!("--eps must be positive, got {eps}")));
            }
            let mu0 = load_measure(&need(&cfg.mu0, "mu0")?, cfg.prune)?;
            let mu1 = load_measure(&need(&cfg.mu1, "mu1")?, cfg.prune)?;
            let n = positive(cfg.n.unwrap_or(mu0.len()), "n")?;
            Job::Bootstrap {
                mu0,
                mu1,
                eps,
                n,
                b: positive(need(&cfg.b, "b")?, "b")?,
            }
        }
        CommandName::Histogram => Job::Histogram {
            gd0: model(&cfg.model0, "model0")?,
            gd1: model(&cfg.model1, "model1")?,
            n: positive(need(&cfg.n, "n")?, "n")?,
            reps: positive(need(&cfg.reps, "reps")?, "reps")?,
            mode: mode(&cfg.mode)?,
        },
    })
}

/// What a command produced: the main artifact plus a small summary.
pub struct Artifact {
    pub body: String,
    pub summary: Value,
}

fn csv_values(values: &[f64]) -> String {
    let mut s = String::from("value\n");
    for v in values {
        s.push_str(&fmt_f64(*v));
        s.push('\n');
    }
    s
}

fn quantile_grid(values: &[f64]) -> Result<Value> {
    let mut m = serde_json::Map::new();
    for q in QUANTILE_GRID {
        m.insert(format!("{q}"), json!(quantile(values, q)?));
    }
    Ok(Value::Object(m))
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

fn flat_csv(obj: &Value) -> String {
    let mut s = String::from("key,value\n");
    if let Value::Object(m) = obj {
        for (k, v) in m {
            let cell = match v {
                Value::Number(x) => fmt_f64(x.as_f64().unwrap_or(f64::NAN)),
                Value::Bool(b) => b.to_string(),
                Value::Null => "inf".into(),
                Value::String(t) => t.clone(),
                Value::Array(a) if a.iter().all(Value::is_number) => {
                    a.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
                }
                _ => continue,
            };
            s.push_str(&format!("{k},{cell}\n"));
        }
    }
    s
}

fn sweep_csv(s: &ErrorSweep) -> String {
    let mut out = String::from("n,alpha,reps,type1_rejections,type1_rate,type2_rejections,type2_rate\n");
    for c in &s.cells {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            c.n,
            fmt_f64(c.alpha),
            c.reps,
            c.type1_rejections,
            fmt_f64(c.type1_rate),
            c.type2_rejections.map(|v| v.to_string()).unwrap_or_default(),
            c.type2_rate.map(fmt_f64).unwrap_or_default(),
        ));
    }
    out
}

fn json_doc(mut v: Value) -> String {
    if let Value::Object(m) = &mut v {
        m.insert("schema".into(), json!(SCHEMA));
    }
    let mut s = to_json(&v);
    s.push('\n');
    s
}

fn values_artifact(values: Vec<f64>, summary: Value, format: Format) -> Artifact {
    let body = match format {
        Format::Csv => csv_values(&values),
        Format::Json => json_doc(json!({"values": values, "summary": summary})),
    };
    Artifact { body, summary }
}

fn scalar_artifact(doc: Value, format: Format) -> Artifact {
    let body = match format {
        Format::Json => json_doc(doc.clone()),
        Format::Csv => flat_csv(&doc),
    };
    Artifact { body, summary: Value::Null }
}

fn compute(
    mu0: &DiscreteMeasure,
    mu1: &DiscreteMeasure,
    eps: f64,
    starts: &Starts,
    tol: f64,
    max_iter: usize,
    seed: u64,
) -> Result<Value> {
    let prob = GwProblem::new(mu0, mu1).with_eps(eps).with_tol(tol).with_max_iter(max_iter);
    let (report, extra) = match starts {
        Starts::Default => (solve_problem(&prob, &default_starts(&prob, seed))?, Value::Null),
        Starts::Random(k) => (solve_problem(&prob, &random_starts(&prob, *k, seed))?, Value::Null),
        Starts::Exhaustive => {
            let r = exhaustive_search_problem(&prob, EXHAUSTIVE_CAP)?;
            let extra = json!({"best_sigma": r.best_sigma, "gap_ratio": r.gap_ratio()});
            (r.report, extra)
        }
    };
    let mut doc = report_json(&report);
    if eps > 0.0 {
        doc["margin"] = json!(entropic_uniqueness_margin(mu0, mu1, eps));
    }
    if !extra.is_null() {
        doc["exhaustive"] = extra;
    }
    Ok(doc)
}

/// Run a validated job.
pub fn execute(job: &Job, cfg: &RunConfig) -> Result<Artifact> {
    let seed = cfg.seed.expect("validated");
    let format = cfg.format.expect("defaults filled");
    match job {
        Job::Compute {
            mu0,
            mu1,
            eps,
            starts,
            tol,
            max_iter,
        } => {
            let doc = compute(mu0, mu1, *eps, starts, *tol, *max_iter, seed)?;
            Ok(scalar_artifact(json!({"report": doc}), format).with_flat(format, &doc))
        }
        Job::Match { gd0, gd1, mode } => {
            let prob = GwProblem::new(&embed(gd0)?, &embed(gd1)?);
            let doc = match mode {
                MatchMode::Exhaustive => {
                    let r = exhaustive_search_problem(&prob, EXHAUSTIVE_CAP)?;
                    let per: Vec<Value> = r
                        .sigmas
                        .iter()
                        .zip(&r.values)
                        .map(|(s, v)| json!({"sigma": s, "value": v}))
                        .collect();
                    json!({
                        "mode": "exhaustive",
                        "permutation": r.best_sigma,
                        "value": r.value,
                        "gap_ratio": r.gap_ratio(),
                        "per_sigma": per,
                        "report": report_json(&r.report),
                    })
                }
                MatchMode::Relaxed => {
                    let (rep, m) = relaxed_matching_problem(&prob, gd0, gd1)?;
                    json!({
                        "mode": "relaxed",
                        "permutation": m.permutation,
                        "value": rep.value,
                        "match": match_json(&m),
                        "report": report_json(&rep),
                    })
                }
            };
            Ok(scalar_artifact(doc, format))
        }
        Job::LimitPlain { mu, draws, delta } => {
            let poly = build_polytope(mu, *delta)?;
            let values = sample_ln(&poly, &CostGaussianSpec::plain(mu), *draws, seed)?;
            let summary = json!({"support_size": poly.len(), "quantiles": quantile_grid(&values)?});
            Ok(values_artifact(values, summary, format))
        }
        Job::LimitGraph { gd, draws, delta } => {
            let emb = embed_with_index(gd)?;
            let poly = build_polytope(&emb.measure, *delta)?;
            let spec = CostGaussianSpec::graph_block(gd, &emb)?;
            let values = sample_ln(&poly, &spec, *draws, seed)?;
            let summary = json!({"support_size": poly.len(), "quantiles": quantile_grid(&values)?});
            Ok(values_artifact(values, summary, format))
        }
        Job::TestIso {
            gd0,
            gd1,
            n,
            alpha,
            draws,
            mode,
        } => {
            let (g0, g1) = sample_pair(gd0, gd1, *n, seed, 0);
            let t = iso_test(&g0, &g1, *alpha, *draws, *mode, rep_draw_seed(seed, 0))?;
            Ok(scalar_artifact(serde_json::to_value(&t).expect("plain struct"), format))
        }
        Job::Sweep { gd0, gd1, cfg: sc } => {
            let s = error_sweep(gd0, gd1.as_ref(), sc, seed)?;
            let summary = json!({"null_permutation": s.null_permutation});
            let body = match format {
                Format::Csv => sweep_csv(&s),
                Format::Json => json_doc(serde_json::to_value(&s).expect("plain struct")),
            };
            Ok(Artifact { body, summary })
        }
        Job::Bootstrap { mu0, mu1, eps, n, b } => {
            let boot = bootstrap_entropic(mu0, mu1, *n, *eps, *b, seed)?;
            let (mean, sd) = mean_sd(&boot.values);
            let ks = if boot.values.len() > 1 && sd > 0.0 {
                json!(ks_normal_fit(&boot.values)?)
            } else {
                Value::Null
            };
            let summary = json!({
                "margin": boot.margin,
                "original_value": boot.original.value,
                "mean": mean,
                "sd": sd,
                "ks_normal": ks,
            });
            Ok(values_artifact(boot.values, summary, format))
        }
        Job::Histogram {
            gd0,
            gd1,
            n,
            reps,
            mode,
        } => {
            let values = limit_histogram(gd0, gd1, *n, *reps, *mode, seed)?;
            let (mean, sd) = mean_sd(&values);
            Ok(values_artifact(values, json!({"mean": mean, "sd": sd}), format))
        }
    }
}

impl Artifact {
    fn with_flat(mut self, format: Format, flat: &Value) -> Self {
        if format == Format::Csv {
            self.body = flat_csv(flat);
        }
        self
    }
}

fn metadata(cfg: &RunConfig, summary: &Value) -> Value {
    json!({
        "command": cfg.command.map(CommandName::name),
        "version": VERSION,
        "seed": cfg.seed,
        "parameters": cfg,
        "summary": summary,
    })
}

/// Where the metadata of a CSV artifact goes.
pub fn meta_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

fn error_record(kind: &str, e: &Error) -> String {
    let mut err = json!({"kind": kind, "message": e.to_string()});
    if let Error::Io { path, .. } | Error::Parse { path, .. } = e {
        err["path"] = json!(path);
    }
    json_doc(json!({ "error": err }))
}

fn threads_from_env(flag: Option<usize>) -> Result<Option<usize>> {
    match std::env::var("GW_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&t| t > 0)
            .map(Some)
            .ok_or_else(|| Error::InvalidArgument(format!("GW_THREADS={v:?} is not a positive integer"))),
        Err(_) => Ok(flag),
    }
}

/// Parse `args`, run, and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let err = Error::InvalidArgument(e.render().to_string().trim().to_string());
            eprint!("{}", error_record("config", &err));
            return EXIT_CONFIG;
        }
    };
    let prepared = (|| {
        let mut cfg = resolve(&cli)?;
        cfg.threads = threads_from_env(cfg.threads)?;
        let job = validate(&cfg)?;
        Ok::<_, Error>((cfg, job))
    })();
    let (cfg, job) = match prepared {
        Ok(v) => v,
        Err(e) => {
            eprint!("{}", error_record("config", &e));
            return EXIT_CONFIG;
        }
    };
    if let Some(t) = cfg.threads {
        // a second initialization in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    eprint!(
        "{}",
        json_doc(json!({
            "provenance": {
                "command": cfg.command.map(CommandName::name),
                "version": VERSION,
                "seed": cfg.seed,
                "threads": rayon::current_num_threads(),
                "parameters": cfg,
            }
        }))
    );
    let started = Instant::now();
    let result = execute(&job, &cfg).and_then(|art| {
        match &cfg.output {
            Some(path) => {
                write_atomic(path, art.body.as_bytes())?;
                if cfg.format == Some(Format::Csv) && !art.summary.is_null() {
                    write_atomic(&meta_path(path), json_doc(metadata(&cfg, &art.summary)).as_bytes())?;
                }
            }
            None => {
                let mut out = io::stdout().lock();
                out.write_all(art.body.as_bytes())
                    .and_then(|_| out.flush())
                    .map_err(|e| Error::Io {
                        path: "<stdout>".into(),
                        message: e.to_string(),
                    })?;
            }
        }
        Ok(art.summary)
    });
    match result {
        Ok(summary) => {
            let mut done = BTreeMap::new();
            done.insert("elapsed_seconds", json!(started.elapsed().as_secs_f64()));
            if !summary.is_null() {
                done.insert("summary", summary);
            }
            eprint!("{}", json_doc(json!({ "done": done })));
            0
        }
        Err(e) => {
            eprint!("{}", error_record("module", &e));
            EXIT_MODULE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format() {
        assert_eq!(fmt_f64(0.1), "0.10000000000000001");
        assert_eq!(fmt_f64(1.0), "1.0");
        assert_eq!(fmt_f64(-2.5), "-2.5");
        assert_eq!(fmt_f64(1e-7), "9.9999999999999995e-8");
        assert_eq!(fmt_f64(123456.0), "123456.0");
        assert_eq!(fmt_f64(1e20), "1e20");
        assert_eq!(fmt_f64(f64::INFINITY), "inf");
        for x in [0.1, 1.0 / 3.0, 2.0f64.sqrt() * 1e-9, 6.02e23, -7.25e-300, 1234.5678] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn json_uses_seventeen_digits_and_null() {
        let s = to_json(&json!({"a": 0.1, "b": [1.0, 2.5]}));
        assert_eq!(s, r#"{"a":0.10000000000000001,"b":[1.0,2.5]}"#);
        #[derive(Serialize)]
        struct W {
            x: f64,
        }
        assert_eq!(to_json(&W { x: f64::INFINITY }), r#"{"x":null}"#);
    }

    #[test]
    fn fractions() {
        assert_eq!(parse_fraction("1/9").unwrap(), 1.0 / 9.0);
        assert_eq!(parse_fraction(" 0.25 ").unwrap(), 0.25);
        assert!(parse_fraction("a/2").is_err());
    }

    #[test]
    fn starts_parse() {
        assert_eq!("random:3".parse::<Starts>().unwrap(), Starts::Random(3));
        assert_eq!("exhaustive".parse::<Starts>().unwrap(), Starts::Exhaustive);
        assert!("random:0".parse::<Starts>().is_err());
        assert!("many".parse::<Starts>().is_err());
    }

    #[test]
    fn overlay_prefers_flags() {
        let base = RunConfig {
            seed: Some(1),
            reps: Some(5),
            ..Default::default()
        };
        let over = RunConfig {
            seed: Some(2),
            ..Default::default()
        };
        let c = base.overlay(over);
        assert_eq!(c.seed, Some(2));
        assert_eq!(c.reps, Some(5));
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.csv");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
