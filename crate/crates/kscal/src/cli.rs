//! Command-line front end. Flags win over the config file, which wins over
//! built-in defaults.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use kscal_core::ParamVector;

use crate::config::{builtin, ExperimentConfig, ExperimentPoint, RunConfigFile};
use crate::error::{exit, Error, Result};
use crate::experiments::{self, RunOptions};
use crate::{io, report};

const DEFAULT_OUT: &str = "kscal-out";

#[derive(Debug, Parser)]
#[command(name = "kscal", version, about = "Kernel score calibration of queueing simulators")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit θ to target data by projected SGD on the kernel simulated score.
    Calibrate(CalibrateArgs),
    /// Build the sandwich confidence set at a given estimate.
    Confidence(ConfidenceArgs),
    /// Run a Monte Carlo batch and write report CSVs.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run file (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Point id when the config expands to several points.
    #[arg(long)]
    pub point: Option<String>,
    /// Observations (CSV, one column per output dimension) instead of
    /// synthetic target data.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct ConfidenceArgs {
    #[command(flatten)]
    pub common: Common,
    /// `theta_hat.json` from `calibrate`, or an inline list such as `2.5,1.0`.
    #[arg(long = "theta-hat", allow_hyphen_values = true)]
    pub theta_hat: String,
    /// Overrides the level in the config.
    #[arg(long)]
    pub alpha: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Built-in experiment id.
    #[arg(conflicts_with = "config")]
    pub id: Option<String>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Replications per point.
    #[arg(long = "R", visible_alias = "replications")]
    pub replications: Option<usize>,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Cache for estimated θ★ values (default `<out>/cache`).
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
}

/// Contents of `theta_hat.json`.
#[derive(Debug, Serialize, Deserialize)]
pub struct CalibrationOutput {
    pub point: String,
    pub seed: u64,
    pub param_names: Vec<String>,
    pub theta_hat: Vec<f64>,
    pub theta0: Vec<f64>,
    pub final_score: Option<f64>,
    pub iterations: usize,
}

fn load_run_file(path: &Path) -> Result<RunConfigFile> {
    io::read_json(path)
}

fn select_point(cfg: &ExperimentConfig, wanted: Option<&str>) -> Result<ExperimentPoint> {
    let mut points = cfg.expand()?;
    match wanted {
        Some(id) => points.into_iter().find(|p| p.id == id).ok_or_else(|| {
            Error::Config(format!("no point {id:?} in {}; points: {}", cfg.id, ids(&cfg.expand().unwrap_or_default())))
        }),
        None if points.len() == 1 => Ok(points.remove(0)),
        None => Err(Error::Config(format!(
            "{} expands to {} points; choose one with --point ({})",
            cfg.id,
            points.len(),
            ids(&points)
        ))),
    }
}

fn ids(points: &[ExperimentPoint]) -> String {
    points.iter().map(|p| p.id.as_str()).collect::<Vec<_>>().join(", ")
}

struct Resolved {
    point: ExperimentPoint,
    seed: u64,
    out: PathBuf,
}

fn resolve_common(c: &Common) -> Result<Resolved> {
    let file = load_run_file(&c.config)?;
    let cfg = file.experiment.resolve()?;
    let mut point = select_point(&cfg, c.point.as_deref())?;
    if let Some(r) = file.replications {
        point.replications = r;
    }
    Ok(Resolved {
        point,
        seed: c.seed.or(file.seed).unwrap_or(0),
        out: c.out.clone().or(file.out).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)),
    })
}

fn load_data(point: &ExperimentPoint, data: Option<&Path>, seed: u64) -> Result<Vec<f64>> {
    match data {
        Some(path) => io::read_data_csv(path, point.model.output_dim()),
        None => experiments::target_data(point, seed),
    }
}

fn cmd_calibrate(args: &CalibrateArgs) -> Result<()> {
    let r = resolve_common(&args.common)?;
    let data = load_data(&r.point, args.common.data.as_deref(), r.seed)?;
    let (_, res) = experiments::calibrate_point(&r.point, data, r.seed, None, true)?;
    let out = CalibrationOutput {
        point: r.point.id.clone(),
        seed: r.seed,
        param_names: r.point.param_names.clone(),
        theta_hat: res.theta_hat.as_slice().to_vec(),
        theta0: res.theta0.as_slice().to_vec(),
        final_score: res.score_trace.last().copied(),
        iterations: res.iterations(),
    };
    io::write_json(&r.out.join("theta_hat.json"), &out)?;
    io::write_trace_csv(&r.out.join("trace.csv"), &res, &r.point.param_names)?;
    println!("{}: theta_hat", r.point.id);
    for (name, v) in r.point.param_names.iter().zip(&out.theta_hat) {
        println!("  {name:>8} = {v:.6}");
    }
    if let Some(s) = out.final_score {
        println!("  final score = {s:.6}");
    }
    Ok(())
}

fn parse_theta(arg: &str, p: usize) -> Result<ParamVector> {
    let path = Path::new(arg);
    let values: Vec<f64> = if path.exists() {
        let v: serde_json::Value = io::read_json(path)?;
        let arr = v.get("theta_hat").unwrap_or(&v);
        serde_json::from_value(arr.clone())
            .map_err(|e| Error::Config(format!("{}: expected theta_hat as a list of numbers: {e}", path.display())))?
    } else {
        arg.split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|_| Error::Config(format!("bad --theta-hat value {s:?}"))))
            .collect::<Result<_>>()?
    };
    if values.len() != p {
        return Err(Error::Config(format!("--theta-hat has {} coordinate(s), the model has {p}", values.len())));
    }
    Ok(ParamVector::new(values)?)
}

fn cmd_confidence(args: &ConfidenceArgs) -> Result<()> {
    let r = resolve_common(&args.common)?;
    let theta_hat = parse_theta(&args.theta_hat, r.point.dim())?;
    if !r.point.domain.contains(theta_hat.as_slice()) {
        return Err(Error::Config("--theta-hat lies outside the domain".into()));
    }
    let alpha = args.alpha.unwrap_or(r.point.alpha);
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config("alpha must lie in (0, 1)".into()));
    }
    let data = load_data(&r.point, args.common.data.as_deref(), r.seed)?;
    let ctx = kscal_core::ScoreContext::new(
        data,
        &r.point.kernel,
        r.point.model.clone(),
        r.point.domain.clone(),
        r.point.n,
    )?;
    let set = experiments::confidence_with_alpha(&ctx, &r.point, &theta_hat, r.seed, alpha)?;
    io::write_json(&r.out.join("confidence.json"), &set)?;
    println!("{}: {:.0}% confidence set at {:?}", r.point.id, 100.0 * (1.0 - alpha), theta_hat.as_slice());
    println!("  threshold = {:.6}", set.threshold);
    if let Some(w) = set.width() {
        println!("  width     = {w:.6}");
    }
    if let Some(h) = set.height() {
        println!("  height    = {h:.6}");
    }
    Ok(())
}

fn cmd_experiment(args: &ExperimentArgs) -> Result<()> {
    let (cfg, file) = match (&args.id, &args.config) {
        (Some(id), None) => (builtin(id)?, None),
        (None, Some(path)) => {
            let f = load_run_file(path)?;
            (f.experiment.resolve()?, Some(f))
        }
        _ => {
            return Err(Error::Config(format!(
                "give a built-in id or --config; valid ids: {}",
                crate::BUILTIN_IDS.join(", ")
            )))
        }
    };
    let out = args
        .out
        .clone()
        .or_else(|| file.as_ref().and_then(|f| f.out.clone()))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    let opts = RunOptions {
        seed: args.seed.or(file.as_ref().and_then(|f| f.seed)).unwrap_or(0),
        threads: args.threads.or(file.as_ref().and_then(|f| f.threads)).unwrap_or(0),
        cache_dir: Some(
            args.cache_dir
                .clone()
                .or_else(|| file.as_ref().and_then(|f| f.cache_dir.clone()))
                .unwrap_or_else(|| out.join("cache")),
        ),
        replications: args.replications.or(file.as_ref().and_then(|f| f.replications)),
    };
    let result = experiments::run_experiment(&cfg, &opts)?;
    report::write_report(&result, &out)?;
    print!("{}", report::format_table(&result));
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Calibrate(a) => with_threads(a.common.threads, || cmd_calibrate(a)),
        Command::Confidence(a) => with_threads(a.common.threads, || cmd_confidence(a)),
        Command::Experiment(a) => cmd_experiment(a),
    }
}

fn with_threads<T>(threads: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T>
where
    T: Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::ThreadPool(e.to_string()))?;
    pool.install(f)
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { exit::CONFIG } else { exit::OK };
        }
    };
    match dispatch(&cli) {
        Ok(()) => exit::OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
