//! Command-line front end.

mod output;
mod report;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::cdcheck::{self, CdError, DEFAULT_K_GRID};
use crate::disintegration::{
    profile_second_log_derivative, DensityJet, DensityModel, Pipeline, ProfilePoint,
};
use crate::hamiltonian::{Hamiltonian, Tolerance};
use crate::structure::{validate, ArStructure, Severity, ValidationOptions};

pub use output::{sci, sig4, to_json, write_atomic};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_INCONCLUSIVE: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "ARCD_THREADS";

#[derive(Debug, Parser)]
#[command(name = "arcd", version, about = "Curvature-dimension disproofs for almost-Riemannian structures")]
pub struct Cli {
    /// Seed for randomized validation spot checks.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a structure file and report diagnostics.
    Validate {
        file: PathBuf,
    },
    /// Integrate the transversal geodesic through a point of the hypersurface.
    Geodesic(GeodesicArgs),
    /// Density jet and optional density profile at a point.
    Density(DensityArgs),
    /// Sample the approach curve and decide whether CD(K,N) fails.
    #[command(name = "check-cd")]
    CheckCd(CheckArgs),
    /// Summarize a directory of check-cd reports.
    Report {
        dir: PathBuf,
        /// CSV of (structure, x, value); defaults to <dir>/curves.csv.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct GeodesicArgs {
    pub file: PathBuf,
    /// Base point (x, z1, ..., zn) with zn = 0.
    #[arg(long, num_args = 1.., allow_negative_numbers = true, required = true)]
    pub q: Vec<f64>,
    #[arg(long, default_value_t = 0.1)]
    pub smax: f64,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    /// Number of output rows, evenly spaced over [-smax, smax].
    #[arg(long, default_value_t = 21)]
    pub samples: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PipelineArg {
    Closed,
    Taylor,
    Both,
}

#[derive(Debug, Args)]
pub struct DensityArgs {
    pub file: PathBuf,
    #[arg(long, num_args = 1.., allow_negative_numbers = true, required = true)]
    pub q: Vec<f64>,
    #[arg(long, value_enum, default_value_t = PipelineArg::Closed)]
    pub pipeline: PipelineArg,
    /// Density profile grid `smin:smax:k`.
    #[arg(long, allow_hyphen_values = true)]
    pub profile: Option<String>,
    /// JSON output path (stdout if omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Profile CSV path (stdout if omitted).
    #[arg(long)]
    pub profile_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SinglePipeline {
    Closed,
    Taylor,
}

impl From<SinglePipeline> for Pipeline {
    fn from(p: SinglePipeline) -> Self {
        match p {
            SinglePipeline::Closed => Pipeline::ClosedForm,
            SinglePipeline::Taylor => Pipeline::NumericTaylor,
        }
    }
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    pub file: PathBuf,
    /// Geometric x grid `a:b:k`.
    #[arg(long)]
    pub xgrid: Option<String>,
    /// Comma-separated K values.
    #[arg(long = "K", value_delimiter = ',', allow_negative_numbers = true)]
    pub k: Option<Vec<f64>>,
    #[arg(long, value_enum, default_value_t = SinglePipeline::Closed)]
    pub pipeline: SinglePipeline,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_triple(src: &str, what: &str) -> Result<(f64, f64, usize)> {
    let parts: Vec<&str> = src.split(':').collect();
    if parts.len() != 3 {
        bail!("{what} must have the form a:b:k, got `{src}`");
    }
    let a: f64 = parts[0].trim().parse().with_context(|| format!("bad {what} start `{}`", parts[0]))?;
    let b: f64 = parts[1].trim().parse().with_context(|| format!("bad {what} end `{}`", parts[1]))?;
    let k: usize = parts[2].trim().parse().with_context(|| format!("bad {what} count `{}`", parts[2]))?;
    if !a.is_finite() || !b.is_finite() {
        bail!("{what} bounds must be finite");
    }
    Ok((a, b, k))
}

/// Linear grid `smin:smax:k`.
pub fn parse_profile_grid(src: &str) -> Result<Vec<f64>> {
    let (a, b, k) = parse_triple(src, "profile")?;
    if k < 2 || !(a < b) {
        bail!("profile needs smin < smax and k >= 2");
    }
    Ok((0..k)
        .map(|i| {
            let v = a + (b - a) * i as f64 / (k - 1) as f64;
            if v.abs() < 1e-12 * (b - a) {
                0.0
            } else {
                v
            }
        })
        .collect())
}

/// Geometric grid `a:b:k`.
pub fn parse_x_grid(src: &str) -> Result<Vec<f64>> {
    let (a, b, k) = parse_triple(src, "xgrid")?;
    if k < 1 || !(a > 0.0 && b > 0.0) {
        bail!("xgrid needs positive bounds and k >= 1");
    }
    Ok(cdcheck::geometric_grid(a, b, k))
}

/// Read and validate a structure file. Hard diagnostics abort unless they
/// are downgraded by `opts`.
pub fn load(path: &Path, opts: &ValidationOptions) -> Result<ArStructure> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut s = ArStructure::from_config(&text).with_context(|| format!("in {}", path.display()))?;
    if s.name().is_empty() {
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        s = s.with_name(stem);
    }
    let report = validate(&s, opts);
    for d in &report.diagnostics {
        match d.severity {
            Severity::Warning => log::warn!("{}: {}", d.code, d.message),
            Severity::Info => log::info!("{}: {}", d.code, d.message),
            Severity::Error => {}
        }
    }
    if let Some(err) = report.first_error() {
        return Err(anyhow!(err.clone())).with_context(|| format!("{} failed validation", path.display()));
    }
    Ok(s)
}

fn compute_opts(seed: u64) -> ValidationOptions {
    ValidationOptions {
        seed,
        allow_nonsingular_origin: true,
        ..Default::default()
    }
}

fn cmd_validate(file: &Path, seed: u64) -> Result<i32> {
    let text = std::fs::read_to_string(file).with_context(|| format!("cannot read {}", file.display()))?;
    let s = ArStructure::from_config(&text).with_context(|| format!("in {}", file.display()))?;
    let opts = ValidationOptions {
        seed,
        ..Default::default()
    };
    let report = validate(&s, &opts);
    let mut out = String::new();
    for d in &report.diagnostics {
        let tag = match d.severity {
            Severity::Info => "info",
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        out.push_str(&format!("{tag:>7} {}: {}\n", d.code, d.message));
    }
    let code = if report.has_errors() {
        out.push_str(&format!("{}: INVALID\n", file.display()));
        EXIT_ERROR
    } else {
        out.push_str(&format!("{}: valid\n", file.display()));
        EXIT_OK
    };
    output::emit(None, &out)?;
    Ok(code)
}

fn cmd_geodesic(args: &GeodesicArgs, seed: u64) -> Result<i32> {
    if !(args.smax > 0.0) || !(args.tol > 0.0) || args.samples < 2 {
        bail!("--smax and --tol must be positive and --samples at least 2");
    }
    let s = load(&args.file, &compute_opts(seed))?;
    let ham = Hamiltonian::new(&s);
    let arc = ham.exp_from_surface(&args.q, args.smax, Tolerance::uniform(args.tol))?;
    let n = s.n();
    let mut header = vec!["s".to_string(), "x".to_string()];
    header.extend((1..=n).map(|i| format!("z{i}")));
    header.push("px".into());
    header.extend((1..=n).map(|i| format!("pz{i}")));
    header.push("2H".into());
    let mut csv = header.join(",") + "\n";
    for i in 0..args.samples {
        let t = -args.smax + 2.0 * args.smax * i as f64 / (args.samples - 1) as f64;
        let t = if i == args.samples - 1 { args.smax } else { t };
        let st = arc.state(t)?;
        let energy = 2.0 * ham.value(&st)?;
        let mut row = vec![t];
        row.extend(st.to_vec());
        row.push(energy);
        csv.push_str(&output::csv_row(row));
        csv.push('\n');
    }
    output::emit(args.out.as_deref(), &csv)?;
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct Agreement {
    max_abs_grad_delta: f64,
    max_abs_f: f64,
    abs_h_n: f64,
    rel_log_h_second: f64,
}

#[derive(Serialize)]
struct DensityOutput<'a> {
    structure: &'a str,
    q: &'a [f64],
    jets: Vec<DensityJet>,
    #[serde(skip_serializing_if = "Option::is_none")]
    agreement: Option<Agreement>,
    #[serde(skip_serializing_if = "Option::is_none")]
    profile_log_h_second: Option<f64>,
}

fn agreement(a: &DensityJet, b: &DensityJet) -> Agreement {
    let max_diff = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    Agreement {
        max_abs_grad_delta: max_diff(&a.grad_delta, &b.grad_delta),
        max_abs_f: max_diff(&a.f, &b.f),
        abs_h_n: (a.h_n() - b.h_n()).abs(),
        rel_log_h_second: (a.log_h_second - b.log_h_second).abs() / a.log_h_second.abs(),
    }
}

fn cmd_density(args: &DensityArgs, seed: u64) -> Result<i32> {
    let grid = args.profile.as_deref().map(parse_profile_grid).transpose()?;
    let s = load(&args.file, &compute_opts(seed))?;
    let model = DensityModel::new(&s);
    let pipelines: &[Pipeline] = match args.pipeline {
        PipelineArg::Closed => &[Pipeline::ClosedForm],
        PipelineArg::Taylor => &[Pipeline::NumericTaylor],
        PipelineArg::Both => &[Pipeline::ClosedForm, Pipeline::NumericTaylor],
    };
    let jets = pipelines
        .iter()
        .map(|&p| model.jet(&args.q, p))
        .collect::<Result<Vec<_>, _>>()?;
    let agreement = (jets.len() == 2).then(|| agreement(&jets[0], &jets[1]));
    let profile: Option<Vec<ProfilePoint>> = grid
        .map(|g| crate::disintegration::density_profile(&s, &args.q, &g))
        .transpose()?;
    let profile_fd = profile
        .as_ref()
        .and_then(|p| profile_second_log_derivative(p).ok());
    let doc = DensityOutput {
        structure: s.name(),
        q: &args.q,
        jets,
        agreement,
        profile_log_h_second: profile_fd,
    };
    output::emit(args.out.as_deref(), &to_json(&doc)?)?;
    if let Some(p) = profile {
        let mut csv = String::from("s,h\n");
        for pt in &p {
            csv.push_str(&output::csv_row([pt.s, pt.h]));
            csv.push('\n');
        }
        output::emit(args.profile_out.as_deref(), &csv)?;
    }
    Ok(EXIT_OK)
}

fn cmd_check(args: &CheckArgs, seed: u64) -> Result<i32> {
    let x_grid = args.xgrid.as_deref().map(parse_x_grid).transpose()?;
    let k_grid = args.k.clone().unwrap_or_else(|| DEFAULT_K_GRID.to_vec());
    if k_grid.iter().any(|k| !k.is_finite()) {
        bail!("K values must be finite");
    }
    let s = load(&args.file, &compute_opts(seed))?;
    let x_grid = x_grid.unwrap_or_else(|| cdcheck::default_x_grid(s.chart()));
    let model = DensityModel::new(&s);
    let report = match cdcheck::run_check(&model, &x_grid, &k_grid, args.pipeline.into()) {
        Ok(r) => r,
        Err(e @ CdError::InvalidGrid(_)) => return Err(e.into()),
        Err(e) => return Err(anyhow!(e)).context("curve sampling failed"),
    };
    output::emit(args.out.as_deref(), &to_json(&report)?)?;
    if let Some(f) = &report.fit {
        log::info!(
            "{}: order {}, coeff {}, r2 {}, {:?}",
            report.structure,
            sig4(f.order),
            sig4(f.coeff),
            sig4(f.r2),
            report.verdict
        );
    }
    Ok(report.exit_code())
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_env("ARCD_LOG")
        .format_timestamp(None)
        .try_init();
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v.parse().with_context(|| format!("{THREADS_ENV} must be a positive integer"))?;
        if n == 0 {
            bail!("{THREADS_ENV} must be a positive integer");
        }
        // A pool may already exist when run() is called repeatedly in-process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Run the tool and return the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    init_logging(cli.verbose);
    let result = init_threads().and_then(|_| match &cli.command {
        Command::Validate { file } => cmd_validate(file, cli.seed),
        Command::Geodesic(a) => cmd_geodesic(a, cli.seed),
        Command::Density(a) => cmd_density(a, cli.seed),
        Command::CheckCd(a) => cmd_check(a, cli.seed),
        Command::Report { dir, csv } => report::cmd_report(dir, csv.as_deref()),
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_ERROR
        }
    }
}
