//! Projected stochastic gradient descent on the kernel simulated score.
//!
//! Each iteration draws a fresh simulated sample from its own derived seed,
//! so the whole trajectory is a function of `(context, config, θ₀)`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::linalg::{BoxDomain, ParamVector};
use crate::score::ScoreContext;
use crate::seed::{self, tag};
use crate::sim::{GG1Model, TargetSystem};

/// Update rule. Both use the step-size scale `η₀ / √(1 + t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields))]
pub enum OptimizerKind {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd,
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SgdConfig {
    pub eta0: f64,
    pub max_iters: usize,
    pub optimizer: OptimizerKind,
    /// Polyak–Ruppert: average the last `averaging_window` iterates (0 = off).
    pub averaging_window: usize,
    pub seed: u64,
    pub record_theta_trace: bool,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            eta0: 1.0,
            max_iters: 200,
            optimizer: OptimizerKind::default(),
            averaging_window: 0,
            seed: 0,
            record_theta_trace: false,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta0 > 0.0 && self.eta0.is_finite()) {
            return Err(Error::config("eta0 must be > 0"));
        }
        if let OptimizerKind::Adam { beta1, beta2, eps } = self.optimizer {
            if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2)) {
                return Err(Error::config("Adam betas must lie in [0, 1)"));
            }
            if !(eps > 0.0) {
                return Err(Error::config("Adam eps must be > 0"));
            }
        }
        if self.averaging_window > self.max_iters {
            return Err(Error::config("averaging window cannot exceed max_iters"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CalibrationResult {
    pub theta_hat: ParamVector,
    pub theta0: ParamVector,
    /// `L̂` at the iterate of each iteration, before its update.
    pub score_trace: Vec<f64>,
    /// Iterates after each update, when requested.
    pub theta_trace: Option<Vec<Vec<f64>>>,
}

impl CalibrationResult {
    pub fn iterations(&self) -> usize {
        self.score_trace.len()
    }
}

/// Runs `cfg.max_iters` projected steps from `theta0`.
pub fn calibrate(ctx: &ScoreContext, cfg: &SgdConfig, theta0: &ParamVector) -> Result<CalibrationResult> {
    cfg.validate()?;
    let domain = ctx.domain();
    if theta0.dim() != domain.dim() {
        return Err(Error::DimensionMismatch { expected: domain.dim(), got: theta0.dim() });
    }
    if !domain.contains(theta0.as_slice()) {
        return Err(Error::domain("initial parameter lies outside the domain"));
    }
    let p = theta0.dim();
    let mut theta = theta0.as_slice().to_vec();
    let mut m1 = vec![0.0; p];
    let mut m2 = vec![0.0; p];
    let mut avg = vec![0.0; p];
    let mut score_trace = Vec::with_capacity(cfg.max_iters);
    let mut theta_trace = cfg.record_theta_trace.then(|| Vec::with_capacity(cfg.max_iters));
    let tail_start = cfg.max_iters - cfg.averaging_window;

    for t in 0..cfg.max_iters {
        let mut rng = seed::rng(seed::derive(cfg.seed, &[tag::SGD_ITERATION, t as u64]));
        let (score, grad) = ctx.score_gradient_step(&theta, &mut rng)?;
        if !score.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { iteration: t, reason: "non-finite score or gradient".into() });
        }
        score_trace.push(score);
        let lr = cfg.eta0 / libm::sqrt(1.0 + t as f64);
        match cfg.optimizer {
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let c1 = 1.0 - libm::pow(beta1, (t + 1) as f64);
                let c2 = 1.0 - libm::pow(beta2, (t + 1) as f64);
                for q in 0..p {
                    m1[q] = beta1 * m1[q] + (1.0 - beta1) * grad[q];
                    m2[q] = beta2 * m2[q] + (1.0 - beta2) * grad[q] * grad[q];
                    theta[q] -= lr * (m1[q] / c1) / (libm::sqrt(m2[q] / c2) + eps);
                }
            }
            OptimizerKind::Sgd => {
                for q in 0..p {
                    theta[q] -= lr * grad[q];
                }
            }
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { iteration: t, reason: "non-finite iterate".into() });
        }
        domain.project_in_place(&mut theta)?;
        if t >= tail_start {
            for q in 0..p {
                avg[q] += theta[q];
            }
        }
        if let Some(tr) = theta_trace.as_mut() {
            tr.push(theta.clone());
        }
    }

    let theta_hat = if cfg.averaging_window > 0 {
        let k = cfg.averaging_window as f64;
        let mut a: Vec<f64> = avg.iter().map(|s| s / k).collect();
        domain.project_in_place(&mut a)?;
        a
    } else {
        theta
    };
    Ok(CalibrationResult {
        theta_hat: ParamVector::new(theta_hat)?,
        theta0: theta0.clone(),
        score_trace,
        theta_trace,
    })
}

/// Settings for the large-sample run that defines `θ★`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct OptimumConfig {
    pub m: usize,
    pub n: usize,
    pub max_iters: usize,
    pub averaging_window: usize,
    pub eta0: f64,
}

impl Default for OptimumConfig {
    fn default() -> Self {
        OptimumConfig { m: 5000, n: 1000, max_iters: 800, averaging_window: 100, eta0: 1.0 }
    }
}

/// Estimates the score-optimal parameter `θ★` of `model` for `target` with
/// one long, tail-averaged calibration on a large target sample.
pub fn estimate_optimal_parameter(
    target: &TargetSystem,
    model: &GG1Model,
    kernel: &KernelSpec,
    domain: &BoxDomain,
    opts: &OptimumConfig,
    theta0: &ParamVector,
    key: u64,
) -> Result<ParamVector> {
    let data = target.generate_target_data(opts.m, &mut seed::rng(seed::derive(key, &[tag::TARGET_DATA])))?;
    let ctx = ScoreContext::new(data, kernel, model.clone(), domain.clone(), opts.n)?;
    let cfg = SgdConfig {
        eta0: opts.eta0,
        max_iters: opts.max_iters,
        averaging_window: opts.averaging_window,
        seed: seed::derive(key, &[tag::OPTIMUM]),
        ..SgdConfig::default()
    };
    Ok(calibrate(&ctx, &cfg, theta0)?.theta_hat)
}
