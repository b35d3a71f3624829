//! Monte Carlo harness: `R` independent calibrations per experiment point,
//! each followed by a sandwich confidence set, tallied against `θ★`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use kscal_core::inference::{self, SandwichEstimate};
use kscal_core::seed::{self, tag};
use kscal_core::sgd::{calibrate, estimate_optimal_parameter};
use kscal_core::{CalibrationResult, ConfidenceSet, ParamVector, ScoreContext, SetGeometry};

use crate::config::{ExperimentConfig, ExperimentPoint, ThetaStar};
use crate::error::{Error, Result};
use crate::io;

/// Knobs that are not part of the experiment definition.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: u64,
    /// Worker threads; 0 lets rayon decide.
    pub threads: usize,
    /// Where estimated `θ★` values are cached.
    pub cache_dir: Option<PathBuf>,
    /// Overrides `R` for every point.
    pub replications: Option<usize>,
}

/// Everything needed to redraw the confidence set of one calibration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SetReport {
    pub alpha: f64,
    pub p: usize,
    /// Target sample size; the statistic is `m dᵀ Ĥ Σ̂⁻¹ Ĥ d` with `d = θ − center`.
    pub m: usize,
    pub center: Vec<f64>,
    #[serde(rename = "H_hat")]
    pub h_hat: Vec<Vec<f64>>,
    #[serde(rename = "Sigma_hat")]
    pub sigma_hat: Vec<Vec<f64>>,
    pub threshold: f64,
    pub hessian_step: f64,
    pub n_c: usize,
    #[serde(flatten, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<SetGeometry>,
    #[serde(skip)]
    set: Option<ConfidenceSet>,
}

impl SetReport {
    fn new(sw: &SandwichEstimate, set: ConfidenceSet, boundary_points: usize) -> Result<Self> {
        let p = set.dim();
        let geometry = match set.geometry(boundary_points) {
            Ok(g) => Some(g),
            Err(kscal_core::Error::GeometryUnsupported(_)) => None,
            Err(e) => return Err(e.into()),
        };
        let rows = |m: &kscal_core::SymMatrix| (0..p).map(|i| (0..p).map(|j| m.get(i, j)).collect()).collect();
        Ok(SetReport {
            alpha: set.alpha(),
            p,
            m: sw.m,
            center: set.center().as_slice().to_vec(),
            h_hat: rows(&sw.h_hat),
            sigma_hat: rows(&sw.sigma_hat),
            threshold: set.threshold(),
            hessian_step: sw.step,
            n_c: sw.n_c,
            geometry,
            set: Some(set),
        })
    }

    pub fn confidence_set(&self) -> Option<&ConfidenceSet> {
        self.set.as_ref()
    }

    pub fn width(&self) -> Option<f64> {
        self.geometry.as_ref().map(SetGeometry::width)
    }

    pub fn height(&self) -> Option<f64> {
        self.geometry.as_ref().and_then(SetGeometry::height)
    }
}

/// Key for one replication's sub-streams.
pub fn run_key(seed: u64, point_idx: usize, run: usize) -> u64 {
    seed::derive(seed::derive(seed, &[tag::RUN, point_idx as u64]), &[run as u64])
}

/// Target data for a replication (or a CLI invocation) keyed by `key`.
pub fn target_data(point: &ExperimentPoint, key: u64) -> Result<Vec<f64>> {
    Ok(point.target.generate_target_data(point.m, &mut seed::rng(seed::derive(key, &[tag::TARGET_DATA])))?)
}

/// Draws `θ₀` from the init box and runs projected SGD on `data`.
pub fn calibrate_point(
    point: &ExperimentPoint,
    data: Vec<f64>,
    key: u64,
    theta0: Option<ParamVector>,
    record_trace: bool,
) -> Result<(ScoreContext, CalibrationResult)> {
    let ctx = ScoreContext::new(data, &point.kernel, point.model.clone(), point.domain.clone(), point.n)?;
    let theta0 = match theta0 {
        Some(t) => t,
        None => point.init.sample_uniform(&mut seed::rng(seed::derive(key, &[tag::INIT]))),
    };
    let mut cfg = point.sgd.to_config(seed::derive(key, &[tag::SGD_ITERATION]));
    cfg.record_theta_trace = record_trace;
    let result = calibrate(&ctx, &cfg, &theta0)?;
    Ok((ctx, result))
}

/// Sandwich estimate and confidence set at `theta_hat`.
pub fn confidence_point(ctx: &ScoreContext, point: &ExperimentPoint, theta_hat: &ParamVector, key: u64) -> Result<SetReport> {
    confidence_with_alpha(ctx, point, theta_hat, key, point.alpha)
}

pub fn confidence_with_alpha(
    ctx: &ScoreContext,
    point: &ExperimentPoint,
    theta_hat: &ParamVector,
    key: u64,
    alpha: f64,
) -> Result<SetReport> {
    let mut rng = seed::rng(seed::derive(key, &[tag::CONFIDENCE]));
    let sw = inference::sandwich(ctx, theta_hat.as_slice(), point.n_c, point.hessian_step, &mut rng)?;
    let set = ConfidenceSet::build(&sw, theta_hat, alpha)?;
    SetReport::new(&sw, set, point.boundary_points)
}

/// Outcome of one replication.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub run: usize,
    pub theta0: Vec<f64>,
    /// Empty when calibration failed.
    pub theta_hat: Vec<f64>,
    pub final_score: Option<f64>,
    /// `‖W(θ★ − θ̂)‖²`.
    pub statistic: Option<f64>,
    pub in_set: Option<bool>,
    pub degenerate: bool,
    pub error: Option<String>,
    pub seconds: f64,
    #[serde(skip)]
    pub set: Option<SetReport>,
}

impl RunRecord {
    pub fn width(&self) -> Option<f64> {
        self.set.as_ref().and_then(SetReport::width)
    }

    pub fn height(&self) -> Option<f64> {
        self.set.as_ref().and_then(SetReport::height)
    }
}

fn run_one(point: &ExperimentPoint, theta_star: &[f64], run: usize, key: u64) -> RunRecord {
    let start = Instant::now();
    let theta0 = point.init.sample_uniform(&mut seed::rng(seed::derive(key, &[tag::INIT])));
    let mut rec = RunRecord {
        run,
        theta0: theta0.as_slice().to_vec(),
        theta_hat: Vec::new(),
        final_score: None,
        statistic: None,
        in_set: None,
        degenerate: true,
        error: None,
        seconds: 0.0,
        set: None,
    };
    let outcome = (|| -> Result<()> {
        let data = target_data(point, key)?;
        let (ctx, res) = calibrate_point(point, data, key, Some(theta0.clone()), false)?;
        rec.theta_hat = res.theta_hat.as_slice().to_vec();
        rec.final_score = res.score_trace.last().copied();
        let report = confidence_point(&ctx, point, &res.theta_hat, key)?;
        let set = report.confidence_set().expect("freshly built");
        let stat = set.statistic(theta_star)?;
        rec.statistic = Some(stat);
        rec.in_set = Some(stat <= set.threshold());
        rec.set = Some(report);
        rec.degenerate = false;
        Ok(())
    })();
    if let Err(e) = outcome {
        log::warn!("{} run {run}: {e}", point.id);
        rec.error = Some(e.to_string());
    }
    rec.seconds = start.elapsed().as_secs_f64();
    rec
}

/// Aggregates over the replications of one point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetrics {
    pub replications: usize,
    /// Per-coordinate mean squared error over runs that produced `θ̂`.
    pub mse: Vec<f64>,
    /// Fraction of non-degenerate runs whose set contains `θ★`.
    pub coverage: Option<f64>,
    pub mean_width: Option<f64>,
    pub mean_height: Option<f64>,
    pub degenerate_count: usize,
    pub mean_seconds: f64,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, k) = values.fold((0.0, 0usize), |(s, k), v| (s + v, k + 1));
    (k > 0).then(|| s / k as f64)
}

impl RunMetrics {
    pub fn aggregate(runs: &[RunRecord], theta_star: &[f64]) -> Self {
        let p = theta_star.len();
        let fitted: Vec<&RunRecord> = runs.iter().filter(|r| r.theta_hat.len() == p).collect();
        let mse = (0..p)
            .map(|q| mean(fitted.iter().map(|r| (r.theta_hat[q] - theta_star[q]).powi(2))).unwrap_or(f64::NAN))
            .collect();
        let ok: Vec<&RunRecord> = runs.iter().filter(|r| !r.degenerate).collect();
        let covered = ok.iter().filter(|r| r.in_set == Some(true)).count();
        RunMetrics {
            replications: runs.len(),
            mse,
            coverage: (!ok.is_empty()).then(|| covered as f64 / ok.len() as f64),
            mean_width: mean(ok.iter().filter_map(|r| r.width())),
            mean_height: mean(ok.iter().filter_map(|r| r.height())),
            degenerate_count: runs.len() - ok.len(),
            mean_seconds: mean(runs.iter().map(|r| r.seconds)).unwrap_or(0.0),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PointResult {
    pub point: ExperimentPoint,
    pub theta_star: Vec<f64>,
    pub runs: Vec<RunRecord>,
    pub metrics: RunMetrics,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub id: String,
    pub param_names: Vec<String>,
    pub points: Vec<PointResult>,
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    id: String,
    theta_star: Vec<f64>,
}

/// Content hash of everything that determines an estimated `θ★`.
fn optimum_fingerprint(point: &ExperimentPoint, seed: u64) -> Result<[u8; 32]> {
    let ThetaStar::Estimate(opts) = &point.theta_star else {
        return Err(Error::Config("theta_star is not estimated".into()));
    };
    let payload = serde_json::json!({
        "target": point.target,
        "model": point.model,
        "kernel": point.kernel,
        "domain": point.domain,
        "init": point.init,
        "optimum": opts,
        "seed": seed,
    });
    Ok(Sha256::digest(payload.to_string().as_bytes()).into())
}

/// `θ★` of a point: the known truth, or a long tail-averaged run started at
/// the centre of the init box. Estimates are cached in `cache_dir`.
pub fn resolve_theta_star(point: &ExperimentPoint, seed: u64, cache_dir: Option<&Path>) -> Result<Vec<f64>> {
    let opts = match &point.theta_star {
        ThetaStar::Known(v) => return Ok(v.clone()),
        ThetaStar::Estimate(o) => o,
    };
    let digest = optimum_fingerprint(point, seed)?;
    let hex: String = digest[..12].iter().map(|b| format!("{b:02x}")).collect();
    let cache_path = cache_dir.map(|d| d.join(format!("theta_star_{hex}.json")));
    if let Some(path) = cache_path.as_ref().filter(|p| p.exists()) {
        match io::read_json::<CacheEntry>(path) {
            Ok(entry) if entry.theta_star.len() == point.dim() => return Ok(entry.theta_star),
            Ok(_) => log::warn!("{}: ignoring cache entry with wrong dimension", path.display()),
            Err(e) => log::warn!("ignoring unreadable cache entry: {e}"),
        }
    }
    let center: Vec<f64> =
        point.init.lower().iter().zip(point.init.upper()).map(|(lo, hi)| 0.5 * (lo + hi)).collect();
    let key = seed::derive(seed, &[tag::OPTIMUM, u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))]);
    let start = Instant::now();
    let star = estimate_optimal_parameter(
        &point.target,
        &point.model,
        &point.kernel,
        &point.domain,
        opts,
        &ParamVector::new(center)?,
        key,
    )?
    .into_vec();
    log::info!("{}: estimated theta_star {:?} in {:.1}s", point.id, star, start.elapsed().as_secs_f64());
    if let Some(path) = cache_path {
        io::write_json(&path, &CacheEntry { id: point.id.clone(), theta_star: star.clone() })?;
    }
    Ok(star)
}

fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| Error::ThreadPool(e.to_string()))
}

/// Runs every point of `cfg`. Results depend only on `(cfg, opts.seed)`.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<ExperimentResult> {
    let mut points = cfg.expand()?;
    if let Some(r) = opts.replications {
        if r == 0 {
            return Err(Error::Config("R must be at least 1".into()));
        }
        for p in &mut points {
            p.replications = r;
        }
    }
    let pool = pool(opts.threads)?;
    let stars: Vec<Vec<f64>> = pool.install(|| {
        points.par_iter().map(|p| resolve_theta_star(p, opts.seed, opts.cache_dir.as_deref())).collect::<Result<_>>()
    })?;

    let mut out = Vec::with_capacity(points.len());
    for (idx, (point, theta_star)) in points.into_iter().zip(stars).enumerate() {
        log::info!("{}: {} replication(s)", point.id, point.replications);
        let runs: Vec<RunRecord> = pool.install(|| {
            (0..point.replications)
                .into_par_iter()
                .map(|r| run_one(&point, &theta_star, r, run_key(opts.seed, idx, r)))
                .collect()
        });
        let metrics = RunMetrics::aggregate(&runs, &theta_star);
        out.push(PointResult { point, theta_star, runs, metrics });
    }
    Ok(ExperimentResult { id: cfg.id.clone(), param_names: cfg.param_names(), points: out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::builtin;

    fn tiny() -> ExperimentConfig {
        let mut c = builtin("exp1").unwrap();
        c.m = 40;
        c.n = 40;
        c.n_c = 200;
        c.replications = 3;
        c.sgd.max_iters = 30;
        c.sgd.averaging_window = 10;
        c
    }

    #[test]
    fn single_run_aggregates_equal_the_row() {
        let mut c = tiny();
        c.replications = 1;
        let res = run_experiment(&c, &RunOptions { seed: 3, threads: 1, ..Default::default() }).unwrap();
        let pr = &res.points[0];
        assert_eq!(pr.runs.len(), 1);
        let r = &pr.runs[0];
        assert!(!r.degenerate, "{:?}", r.error);
        assert_eq!(pr.metrics.mse[0], (r.theta_hat[0] - 1.2).powi(2));
        assert_eq!(pr.metrics.coverage, Some(if r.in_set.unwrap() { 1.0 } else { 0.0 }));
        assert_eq!(pr.metrics.mean_width, r.width());
        assert_eq!(pr.metrics.degenerate_count, 0);
    }

    #[test]
    fn coverage_is_measured_against_theta_star() {
        let mut c = tiny();
        c.theta_star = ThetaStar::Known(vec![5.9]);
        let far = run_experiment(&c, &RunOptions { seed: 1, threads: 1, ..Default::default() }).unwrap();
        assert_eq!(far.points[0].metrics.coverage, Some(0.0));
        // Centering at each run's own estimate would always cover.
        for r in &far.points[0].runs {
            let set = r.set.as_ref().unwrap().confidence_set().unwrap();
            assert!(set.contains(&r.theta_hat).unwrap());
            assert!(!set.contains(&[5.9]).unwrap());
        }
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let c = tiny();
        let a = run_experiment(&c, &RunOptions { seed: 11, threads: 1, ..Default::default() }).unwrap();
        let b = run_experiment(&c, &RunOptions { seed: 11, threads: 3, ..Default::default() }).unwrap();
        let strip = |res: &ExperimentResult| {
            res.points[0].runs.iter().map(|r| (r.theta_hat.clone(), r.statistic, r.width())).collect::<Vec<_>>()
        };
        assert_eq!(strip(&a), strip(&b));
        let c2 = run_experiment(&c, &RunOptions { seed: 12, threads: 1, ..Default::default() }).unwrap();
        assert_ne!(strip(&a), strip(&c2));
    }

    #[test]
    fn failed_runs_are_degenerate_not_fatal() {
        let pt = &tiny().expand().unwrap()[0];
        let bad = run_one(pt, &[1.2, 1.0], 0, 9);
        assert!(bad.degenerate && bad.error.is_some() && bad.in_set.is_none());
        assert_eq!(bad.theta_hat.len(), 1);
        let good = run_one(pt, &[1.2], 1, 9);
        assert!(!good.degenerate);
        let m = RunMetrics::aggregate(&[bad.clone(), good.clone()], &[1.2]);
        assert_eq!(m.replications, 2);
        assert_eq!(m.degenerate_count, 1);
        assert_eq!(m.coverage, Some(if good.in_set.unwrap() { 1.0 } else { 0.0 }));
        assert_eq!(m.mean_width, good.width());
        let none = RunMetrics::aggregate(&[bad], &[1.2]);
        assert_eq!(none.coverage, None);
    }

    #[test]
    fn theta_star_cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = tiny();
        c.theta_star = ThetaStar::Estimate(kscal_core::OptimumConfig {
            m: 60,
            n: 40,
            max_iters: 20,
            averaging_window: 5,
            eta0: 1.0,
        });
        let pt = &c.expand().unwrap()[0];
        let a = resolve_theta_star(pt, 4, Some(dir.path())).unwrap();
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
        let b = resolve_theta_star(pt, 4, Some(dir.path())).unwrap();
        let fresh = resolve_theta_star(pt, 4, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, fresh);
        assert!(pt.domain.contains(&a));
    }
}
