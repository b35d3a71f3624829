//! Declarative experiment configuration and the built-in batches.
//!
//! A config names one target system, one model and a list of kernels, plus
//! optional sweep axes. [`ExperimentConfig::expand`] turns it into the
//! Cartesian product of concrete [`ExperimentPoint`]s, kernels outermost.

use serde::{Deserialize, Serialize};

use kscal_core::{
    BoxDomain, Contamination, Dist, GG1Model, KernelSpec, OptimizerKind, OptimumConfig, RateSource, SgdConfig, Stage,
    TargetSystem,
};

use crate::error::{Error, Result};

/// Identifiers accepted by [`builtin`].
pub const BUILTIN_IDS: [&str; 8] = ["exp1", "exp2", "exp3", "exp4", "beta_sweep", "n_sweep", "bias", "contamination"];

/// Optimiser settings stored in a config; the seed is derived per run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgdSettings {
    pub eta0: f64,
    pub max_iters: usize,
    pub optimizer: OptimizerKind,
    pub averaging_window: usize,
}

impl Default for SgdSettings {
    fn default() -> Self {
        let d = SgdConfig::default();
        SgdSettings { eta0: d.eta0, max_iters: d.max_iters, optimizer: d.optimizer, averaging_window: d.averaging_window }
    }
}

impl SgdSettings {
    pub fn to_config(&self, seed: u64) -> SgdConfig {
        SgdConfig {
            eta0: self.eta0,
            max_iters: self.max_iters,
            optimizer: self.optimizer,
            averaging_window: self.averaging_window,
            seed,
            record_theta_trace: false,
        }
    }
}

/// The reference parameter used for MSE and coverage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaStar {
    /// The model contains the target; `θ★` is the true parameter.
    Known(Vec<f64>),
    /// Estimate `θ★` with one long run on a large target sample.
    Estimate(OptimumConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    /// Shape `a` of a Gamma service stage in the target.
    ServiceShape,
    /// Riesz exponent `β`; every kernel must be Riesz.
    Beta,
    N,
    M,
    /// Sets `m = n`.
    MN,
    /// Contamination fraction `ε` with the given noise standard deviation.
    Contamination { noise_sd: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub param: SweepParam,
    pub values: Vec<f64>,
}

fn default_n_c() -> usize {
    5000
}
fn default_replications() -> usize {
    100
}
fn default_alpha() -> f64 {
    0.05
}
fn default_hessian_step() -> f64 {
    0.1
}
fn default_boundary_points() -> usize {
    kscal_core::inference::DEFAULT_BOUNDARY_POINTS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub id: String,
    /// Column names for `θ`, e.g. `["mu", "lambda"]`. Defaults to `theta0..`.
    #[serde(default)]
    pub param_names: Vec<String>,
    pub target: TargetSystem,
    pub model: GG1Model,
    pub domain: BoxDomain,
    /// Box for the uniform draw of `θ₀`; the domain when absent.
    #[serde(default)]
    pub init: Option<BoxDomain>,
    pub kernels: Vec<KernelSpec>,
    pub m: usize,
    pub n: usize,
    #[serde(default = "default_n_c")]
    pub n_c: usize,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_hessian_step")]
    pub hessian_step: f64,
    #[serde(default)]
    pub sgd: SgdSettings,
    pub theta_star: ThetaStar,
    #[serde(default)]
    pub sweeps: Vec<Sweep>,
    #[serde(default = "default_boundary_points")]
    pub boundary_points: usize,
}

/// One fully specified cell of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPoint {
    pub id: String,
    pub param_names: Vec<String>,
    pub target: TargetSystem,
    pub model: GG1Model,
    pub domain: BoxDomain,
    pub init: BoxDomain,
    pub kernel: KernelSpec,
    pub m: usize,
    pub n: usize,
    pub n_c: usize,
    pub replications: usize,
    pub alpha: f64,
    pub hessian_step: f64,
    pub sgd: SgdSettings,
    pub theta_star: ThetaStar,
    pub boundary_points: usize,
}

impl ExperimentPoint {
    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    /// Shape of the target's service stage (1 for exponential service).
    pub fn service_shape(&self) -> f64 {
        match self.target.queue.service.dist {
            Dist::Exponential => 1.0,
            Dist::Gamma { shape } => shape,
        }
    }

    pub fn contamination_fraction(&self) -> f64 {
        self.target.contamination.map_or(0.0, |c| c.fraction)
    }

    fn validate(&self) -> Result<()> {
        let p = self.model.num_params();
        self.target.validate()?;
        self.model.validate()?;
        self.kernel.validate()?;
        if self.model.output_dim() != self.target.queue.output_dim() {
            return Err(Error::Config("target and model output dimensions differ".into()));
        }
        for (what, d) in [("domain", self.domain.dim()), ("init", self.init.dim()), ("param_names", self.param_names.len())] {
            if d != p {
                return Err(Error::Config(format!("{}: {what} has dimension {d}, model has {p} parameter(s)", self.id)));
            }
        }
        for q in 0..p {
            if self.init.lower()[q] < self.domain.lower()[q] || self.init.upper()[q] > self.domain.upper()[q] {
                return Err(Error::Config(format!("{}: init box must lie inside the domain", self.id)));
            }
        }
        if self.m < 2 || self.n < 2 || self.n_c < 2 {
            return Err(Error::Config(format!("{}: m, n and n_c must be at least 2", self.id)));
        }
        if self.replications == 0 {
            return Err(Error::Config(format!("{}: R must be at least 1", self.id)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("{}: alpha must lie in (0, 1)", self.id)));
        }
        if !(self.hessian_step > 0.0 && self.hessian_step.is_finite()) {
            return Err(Error::Config(format!("{}: hessian_step must be > 0", self.id)));
        }
        if p == 2 && self.boundary_points < 3 {
            return Err(Error::Config(format!("{}: boundary_points must be at least 3", self.id)));
        }
        self.sgd.to_config(0).validate()?;
        match &self.theta_star {
            ThetaStar::Known(v) if v.len() != p => {
                return Err(Error::Config(format!("{}: theta_star has {} coordinate(s), expected {p}", self.id, v.len())))
            }
            ThetaStar::Known(v) if v.iter().any(|x| !x.is_finite()) => {
                return Err(Error::Config(format!("{}: theta_star must be finite", self.id)))
            }
            ThetaStar::Estimate(o) if o.m < 2 || o.n < 2 || o.averaging_window > o.max_iters || !(o.eta0 > 0.0) => {
                return Err(Error::Config(format!("{}: invalid theta_star estimation settings", self.id)));
            }
            _ => {}
        }
        Ok(())
    }
}

fn fmt_value(v: f64) -> String {
    format!("{v}")
}

fn as_count(v: f64, what: &str) -> Result<usize> {
    if v.fract() != 0.0 || !(2.0..=1e9).contains(&v) {
        return Err(Error::Config(format!("sweep over {what}: {v} is not an integer >= 2")));
    }
    Ok(v as usize)
}

impl ExperimentConfig {
    pub fn dim(&self) -> usize {
        self.model.num_params()
    }

    pub fn param_names(&self) -> Vec<String> {
        if self.param_names.is_empty() {
            (0..self.dim()).map(|q| format!("theta{q}")).collect()
        } else {
            self.param_names.clone()
        }
    }

    /// Checks the config by expanding it.
    pub fn validate(&self) -> Result<()> {
        self.expand().map(|_| ())
    }

    /// Cartesian product over kernels and sweep values, validated.
    pub fn expand(&self) -> Result<Vec<ExperimentPoint>> {
        if self.id.is_empty() || self.id.contains(['/', '\\']) {
            return Err(Error::Config("experiment id must be non-empty and contain no path separators".into()));
        }
        if self.kernels.is_empty() {
            return Err(Error::Config(format!("{}: at least one kernel is required", self.id)));
        }
        let base = ExperimentPoint {
            id: self.id.clone(),
            param_names: self.param_names(),
            target: self.target.clone(),
            model: self.model.clone(),
            domain: self.domain.clone(),
            init: self.init.clone().unwrap_or_else(|| self.domain.clone()),
            kernel: self.kernels[0],
            m: self.m,
            n: self.n,
            n_c: self.n_c,
            replications: self.replications,
            alpha: self.alpha,
            hessian_step: self.hessian_step,
            sgd: self.sgd.clone(),
            theta_star: self.theta_star.clone(),
            boundary_points: self.boundary_points,
        };
        let mut points = Vec::new();
        for kernel in &self.kernels {
            let mut level = vec![ExperimentPoint {
                id: if self.kernels.len() > 1 { format!("{}_{}", self.id, kernel.short_name()) } else { self.id.clone() },
                kernel: *kernel,
                ..base.clone()
            }];
            for sweep in &self.sweeps {
                if sweep.values.is_empty() {
                    return Err(Error::Config(format!("{}: sweep with no values", self.id)));
                }
                let mut next = Vec::with_capacity(level.len() * sweep.values.len());
                for pt in &level {
                    for &v in &sweep.values {
                        next.push(apply_sweep(pt, sweep.param, v)?);
                    }
                }
                level = next;
            }
            points.extend(level);
        }
        for pt in &points {
            pt.validate()?;
        }
        Ok(points)
    }
}

fn apply_sweep(pt: &ExperimentPoint, param: SweepParam, v: f64) -> Result<ExperimentPoint> {
    let mut out = pt.clone();
    match param {
        SweepParam::ServiceShape => {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("service shape must be > 0, got {v}")));
            }
            out.target.queue.service.dist = Dist::Gamma { shape: v };
            out.id = format!("{}_a{}", pt.id, fmt_value(v));
        }
        SweepParam::Beta => match pt.kernel {
            KernelSpec::Riesz { epsilon, .. } => {
                out.kernel = KernelSpec::Riesz { beta: v, epsilon };
                out.id = format!("{}_beta{}", pt.id, fmt_value(v));
            }
            _ => return Err(Error::Config("a beta sweep needs Riesz kernels".into())),
        },
        SweepParam::N => {
            out.n = as_count(v, "n")?;
            out.id = format!("{}_n{}", pt.id, out.n);
        }
        SweepParam::M => {
            out.m = as_count(v, "m")?;
            out.id = format!("{}_m{}", pt.id, out.m);
        }
        SweepParam::MN => {
            out.m = as_count(v, "m=n")?;
            out.n = out.m;
            out.id = format!("{}_mn{}", pt.id, out.m);
        }
        SweepParam::Contamination { noise_sd } => {
            out.target.contamination = Some(Contamination { fraction: v, noise_sd });
            out.id = format!("{}_eps{}", pt.id, fmt_value(v));
        }
    }
    Ok(out)
}

fn exp1_model(burn_in: usize, horizon: usize) -> GG1Model {
    GG1Model { arrival: Stage::exp(RateSource::Fixed(1.0)), service: Stage::exp(RateSource::Param(0)), burn_in, horizon }
}

fn two_param_model(burn_in: usize, horizon: usize) -> GG1Model {
    GG1Model {
        arrival: Stage::gamma(0.5, RateSource::Param(1)),
        service: Stage::exp(RateSource::Param(0)),
        burn_in,
        horizon,
    }
}

fn target(arrival: Stage, service: Stage, burn_in: usize, horizon: usize) -> TargetSystem {
    TargetSystem { queue: GG1Model { arrival, service, burn_in, horizon }, contamination: None }
}

fn bx(lo: &[f64], hi: &[f64]) -> BoxDomain {
    BoxDomain::new(lo.to_vec(), hi.to_vec()).expect("built-in box")
}

/// Riesz `β = 1` needs no smoothing, and `ε = 0` enables the sorted
/// one-dimensional evaluation.
fn energy() -> KernelSpec {
    KernelSpec::Riesz { beta: 1.0, epsilon: 0.0 }
}

/// Settings for the large run that estimates `θ★`.
pub fn optimum_settings() -> OptimumConfig {
    OptimumConfig { max_iters: 1000, ..OptimumConfig::default() }
}

fn exp1() -> ExperimentConfig {
    ExperimentConfig {
        id: "exp1".into(),
        param_names: vec!["mu".into()],
        target: target(Stage::exp(RateSource::Fixed(1.0)), Stage::exp(RateSource::Fixed(1.2)), 10, 50),
        model: exp1_model(10, 50),
        domain: bx(&[1.0], &[6.0]),
        init: Some(bx(&[1.0], &[3.0])),
        kernels: vec![energy()],
        m: 500,
        n: 500,
        n_c: 5000,
        replications: 100,
        alpha: 0.05,
        hessian_step: 0.1,
        sgd: SgdSettings { max_iters: 200, averaging_window: 50, ..SgdSettings::default() },
        theta_star: ThetaStar::Known(vec![1.2]),
        sweeps: Vec::new(),
        boundary_points: default_boundary_points(),
    }
}

fn exp2() -> ExperimentConfig {
    ExperimentConfig {
        id: "exp2".into(),
        target: target(Stage::exp(RateSource::Fixed(1.0)), Stage::gamma(1.0, RateSource::Fixed(1.2)), 10, 50),
        kernels: vec![energy(), KernelSpec::gaussian_median()],
        theta_star: ThetaStar::Estimate(optimum_settings()),
        sweeps: vec![Sweep { param: SweepParam::ServiceShape, values: vec![1.0, 0.8, 0.6, 0.4, 0.2] }],
        ..exp1()
    }
}

fn exp3() -> ExperimentConfig {
    ExperimentConfig {
        id: "exp3".into(),
        param_names: vec!["mu".into(), "lambda".into()],
        target: target(Stage::gamma(0.5, RateSource::Fixed(1.0)), Stage::exp(RateSource::Fixed(1.0)), 0, 10),
        model: two_param_model(0, 10),
        domain: bx(&[0.2, 0.2], &[5.0, 5.0]),
        init: Some(bx(&[0.5, 0.5], &[2.0, 2.0])),
        kernels: vec![energy(), KernelSpec::gaussian_median()],
        m: 1000,
        n: 1000,
        sgd: SgdSettings { max_iters: 800, averaging_window: 200, ..SgdSettings::default() },
        theta_star: ThetaStar::Known(vec![1.0, 1.0]),
        ..exp1()
    }
}

fn exp4() -> ExperimentConfig {
    ExperimentConfig {
        id: "exp4".into(),
        param_names: vec!["mu".into(), "lambda".into()],
        target: target(Stage::gamma(0.5, RateSource::Fixed(1.0)), Stage::gamma(1.0, RateSource::Fixed(2.5)), 10, 20),
        model: two_param_model(10, 20),
        domain: bx(&[0.5, 0.2], &[15.0, 6.0]),
        init: Some(bx(&[1.0, 0.5], &[5.0, 2.5])),
        kernels: vec![energy(), KernelSpec::gaussian_median()],
        m: 1000,
        n: 1000,
        sgd: SgdSettings { max_iters: 800, averaging_window: 200, ..SgdSettings::default() },
        theta_star: ThetaStar::Estimate(optimum_settings()),
        sweeps: vec![Sweep { param: SweepParam::ServiceShape, values: vec![1.0, 0.8, 0.6, 0.4, 0.2] }],
        ..exp1()
    }
}

/// Looks up a built-in batch by id.
pub fn builtin(id: &str) -> Result<ExperimentConfig> {
    let mut cfg = match id {
        "exp1" => exp1(),
        "exp2" => exp2(),
        "exp3" => exp3(),
        "exp4" => exp4(),
        "beta_sweep" => {
            let mut c = exp4();
            c.kernels = vec![KernelSpec::riesz(1.25)];
            c.sweeps = vec![
                Sweep { param: SweepParam::Beta, values: vec![1.25, 1.5, 1.75, 2.0] },
                Sweep { param: SweepParam::ServiceShape, values: vec![1.0, 0.6] },
            ];
            c
        }
        "n_sweep" => {
            let mut c = exp4();
            c.sweeps = vec![
                Sweep { param: SweepParam::N, values: vec![2.0, 10.0, 50.0, 100.0, 200.0, 500.0] },
                Sweep { param: SweepParam::ServiceShape, values: vec![1.0] },
            ];
            c
        }
        "bias" => {
            let mut c = exp4();
            c.kernels = vec![energy()];
            c.sweeps = vec![
                Sweep { param: SweepParam::M, values: vec![1000.0, 2000.0, 5000.0] },
                Sweep { param: SweepParam::ServiceShape, values: vec![1.0, 0.8, 0.6, 0.4, 0.2] },
            ];
            c
        }
        "contamination" => {
            let mut c = exp3();
            c.replications = 100;
            c.sweeps = vec![Sweep {
                param: SweepParam::Contamination { noise_sd: 0.1 },
                values: vec![0.01, 0.05, 0.1, 0.2, 0.5],
            }];
            c
        }
        other => {
            return Err(Error::Config(format!("unknown experiment {other:?}; valid ids: {}", BUILTIN_IDS.join(", "))))
        }
    };
    cfg.id = id.to_string();
    Ok(cfg)
}

/// The `experiment` field of a run file: a built-in id or an inline config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ExperimentRef {
    Builtin(String),
    Inline(Box<ExperimentConfig>),
}

impl ExperimentRef {
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        match self {
            ExperimentRef::Builtin(id) => builtin(id),
            ExperimentRef::Inline(cfg) => Ok((**cfg).clone()),
        }
    }
}

/// Top-level JSON document read by the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub experiment: ExperimentRef,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub out: Option<std::path::PathBuf>,
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub cache_dir: Option<std::path::PathBuf>,
    /// Overrides the replication count of every point.
    #[serde(default)]
    pub replications: Option<usize>,
}

impl RunConfigFile {
    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}
