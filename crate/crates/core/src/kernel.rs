//! Characteristic kernels and bandwidth selection.
//!
//! All supported kernels are translation invariant, `k(x, y) = κ(x − y)`, so
//! evaluation works on the difference `δ = x − y` and the gradient with
//! respect to `x` is `∂κ/∂δ` (the *slope*); the gradient with respect to `y`
//! is its negation.

use alloc::vec::Vec;

use crate::dual::Dual;
use crate::error::{Error, Result};
use crate::fmath;

/// Gaussian bandwidth: fixed, or the median heuristic resolved on data.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Bandwidth {
    Fixed(f64),
    Median,
}

/// Kernel choice as configured. Gaussian bandwidths may still be pending.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields))]
pub enum KernelSpec {
    /// `exp(−‖x−y‖₂² / (2σ))`
    Gaussian { sigma: Bandwidth },
    /// `exp(−‖x−y‖₁ / σ)`
    Laplacian { sigma: f64 },
    /// `−½ (‖x−y‖₂² + ε)^{β/2}`
    Riesz {
        beta: f64,
        #[cfg_attr(feature = "serde", serde(default = "default_riesz_epsilon"))]
        epsilon: f64,
    },
}

pub const DEFAULT_RIESZ_EPSILON: f64 = 1e-8;

#[cfg(feature = "serde")]
fn default_riesz_epsilon() -> f64 {
    DEFAULT_RIESZ_EPSILON
}

impl KernelSpec {
    pub fn riesz(beta: f64) -> Self {
        KernelSpec::Riesz { beta, epsilon: DEFAULT_RIESZ_EPSILON }
    }

    pub fn gaussian_median() -> Self {
        KernelSpec::Gaussian { sigma: Bandwidth::Median }
    }

    pub fn short_name(&self) -> &'static str {
        match self {
            KernelSpec::Gaussian { .. } => "gaussian",
            KernelSpec::Laplacian { .. } => "laplacian",
            KernelSpec::Riesz { .. } => "riesz",
        }
    }

    /// Riesz β, when applicable.
    pub fn beta(&self) -> Option<f64> {
        match self {
            KernelSpec::Riesz { beta, .. } => Some(*beta),
            _ => None,
        }
    }

    /// `false` only for the Riesz kernel at β = 2, whose score depends on the
    /// first two moments alone.
    pub fn is_strictly_proper(&self) -> bool {
        !matches!(self, KernelSpec::Riesz { beta, .. } if *beta == 2.0)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Gaussian { sigma: Bandwidth::Fixed(s) } | KernelSpec::Laplacian { sigma: s } => {
                if !(s > 0.0 && s.is_finite()) {
                    return Err(Error::config(alloc::format!("kernel bandwidth must be > 0, got {s}")));
                }
            }
            KernelSpec::Gaussian { sigma: Bandwidth::Median } => {}
            KernelSpec::Riesz { beta, epsilon } => {
                if !(beta > 0.0 && beta <= 2.0) {
                    return Err(Error::config(alloc::format!("Riesz beta must lie in (0, 2], got {beta}")));
                }
                if !(epsilon >= 0.0 && epsilon.is_finite()) {
                    return Err(Error::config("Riesz smoothing epsilon must be >= 0"));
                }
            }
        }
        Ok(())
    }

    /// Resolves without data; fails if the median heuristic is pending.
    pub fn resolve_fixed(&self) -> Result<ResolvedKernel> {
        self.validate()?;
        Ok(match *self {
            KernelSpec::Gaussian { sigma: Bandwidth::Fixed(sigma) } => ResolvedKernel::Gaussian { sigma },
            KernelSpec::Gaussian { sigma: Bandwidth::Median } => {
                return Err(Error::config("Gaussian bandwidth is pending the median heuristic"))
            }
            KernelSpec::Laplacian { sigma } => ResolvedKernel::Laplacian { sigma },
            KernelSpec::Riesz { beta, epsilon } => ResolvedKernel::Riesz { beta, epsilon },
        })
    }

    /// Resolves against target data (`values` is row-major with `dim`
    /// columns). The median heuristic is computed once here and then frozen.
    pub fn resolve(&self, values: &[f64], dim: usize) -> Result<ResolvedKernel> {
        match *self {
            KernelSpec::Gaussian { sigma: Bandwidth::Median } => {
                Ok(ResolvedKernel::Gaussian { sigma: median_heuristic(values, dim)? })
            }
            _ => self.resolve_fixed(),
        }
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        Ok(self.resolve_fixed()?.eval(x, y))
    }
}

/// A kernel with every hyperparameter fixed.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum ResolvedKernel {
    Gaussian { sigma: f64 },
    Laplacian { sigma: f64 },
    Riesz { beta: f64, epsilon: f64 },
}

/// A translation-invariant kernel seen through its difference argument.
pub trait ScalarKernel {
    /// `(κ(δ), κ'(δ))` for one-dimensional outputs.
    fn value_slope_1d(&self, delta: f64) -> (f64, f64);

    /// `κ(δ)`; writes `∂κ/∂δ` into `slope`.
    fn value_slope(&self, delta: &[f64], slope: &mut [f64]) -> f64;
}

/// Monomorphised access to the concrete kernel (keeps hot loops free of
/// per-pair dispatch).
pub trait KernelVisitor {
    type Output;
    fn visit<K: ScalarKernel>(self, kernel: &K) -> Self::Output;
}

pub struct Gaussian {
    inv_sigma: f64,
    inv_two_sigma: f64,
}

pub struct Laplacian {
    inv_sigma: f64,
}

/// Riesz with β = 1: `−½ sqrt(δ² + ε)`.
pub struct RieszOne {
    eps: f64,
}

/// Riesz with β = 2: `−½ (δ² + ε)`.
pub struct RieszTwo {
    eps: f64,
}

pub struct RieszGeneral {
    half_beta: f64,
    eps: f64,
}

impl ScalarKernel for Gaussian {
    #[inline(always)]
    fn value_slope_1d(&self, delta: f64) -> (f64, f64) {
        let v = fmath::exp(-delta * delta * self.inv_two_sigma);
        (v, -v * delta * self.inv_sigma)
    }

    fn value_slope(&self, delta: &[f64], slope: &mut [f64]) -> f64 {
        let r2: f64 = delta.iter().map(|d| d * d).sum();
        let v = fmath::exp(-r2 * self.inv_two_sigma);
        for (s, d) in slope.iter_mut().zip(delta) {
            *s = -v * d * self.inv_sigma;
        }
        v
    }
}

#[inline(always)]
fn sign_or_zero(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl ScalarKernel for Laplacian {
    #[inline(always)]
    fn value_slope_1d(&self, delta: f64) -> (f64, f64) {
        let v = fmath::exp(-delta.abs() * self.inv_sigma);
        (v, -v * sign_or_zero(delta) * self.inv_sigma)
    }

    fn value_slope(&self, delta: &[f64], slope: &mut [f64]) -> f64 {
        let r1: f64 = delta.iter().map(|d| d.abs()).sum();
        let v = fmath::exp(-r1 * self.inv_sigma);
        for (s, d) in slope.iter_mut().zip(delta) {
            *s = -v * sign_or_zero(*d) * self.inv_sigma;
        }
        v
    }
}

impl ScalarKernel for RieszOne {
    #[inline(always)]
    fn value_slope_1d(&self, delta: f64) -> (f64, f64) {
        let s = fmath::sqrt(delta * delta + self.eps);
        let slope = if s > 0.0 { -0.5 * delta / s } else { 0.0 };
        (-0.5 * s, slope)
    }

    fn value_slope(&self, delta: &[f64], slope: &mut [f64]) -> f64 {
        let s = fmath::sqrt(delta.iter().map(|d| d * d).sum::<f64>() + self.eps);
        for (g, d) in slope.iter_mut().zip(delta) {
            *g = if s > 0.0 { -0.5 * d / s } else { 0.0 };
        }
        -0.5 * s
    }
}

impl ScalarKernel for RieszTwo {
    #[inline(always)]
    fn value_slope_1d(&self, delta: f64) -> (f64, f64) {
        (-0.5 * (delta * delta + self.eps), -delta)
    }

    fn value_slope(&self, delta: &[f64], slope: &mut [f64]) -> f64 {
        let r2: f64 = delta.iter().map(|d| d * d).sum();
        for (g, d) in slope.iter_mut().zip(delta) {
            *g = -d;
        }
        -0.5 * (r2 + self.eps)
    }
}

impl RieszGeneral {
    #[inline(always)]
    fn radial(&self, r2: f64) -> (f64, f64) {
        let s = r2 + self.eps;
        if s > 0.0 {
            let pw = fmath::powf(s, self.half_beta);
            // d/dδ of −½ s^{β/2} = −(β/2) s^{β/2 − 1} δ; returned factor multiplies δ.
            (-0.5 * pw, -self.half_beta * pw / s)
        } else {
            (0.0, 0.0)
        }
    }
}

impl ScalarKernel for RieszGeneral {
    #[inline(always)]
    fn value_slope_1d(&self, delta: f64) -> (f64, f64) {
        let (v, f) = self.radial(delta * delta);
        (v, f * delta)
    }

    fn value_slope(&self, delta: &[f64], slope: &mut [f64]) -> f64 {
        let (v, f) = self.radial(delta.iter().map(|d| d * d).sum());
        for (g, d) in slope.iter_mut().zip(delta) {
            *g = f * d;
        }
        v
    }
}

impl ResolvedKernel {
    pub fn dispatch<V: KernelVisitor>(&self, visitor: V) -> V::Output {
        match *self {
            ResolvedKernel::Gaussian { sigma } => {
                visitor.visit(&Gaussian { inv_sigma: 1.0 / sigma, inv_two_sigma: 0.5 / sigma })
            }
            ResolvedKernel::Laplacian { sigma } => visitor.visit(&Laplacian { inv_sigma: 1.0 / sigma }),
            ResolvedKernel::Riesz { beta: 1.0, epsilon } => visitor.visit(&RieszOne { eps: epsilon }),
            ResolvedKernel::Riesz { beta: 2.0, epsilon } => visitor.visit(&RieszTwo { eps: epsilon }),
            ResolvedKernel::Riesz { beta, epsilon } => {
                visitor.visit(&RieszGeneral { half_beta: 0.5 * beta, eps: epsilon })
            }
        }
    }

    pub fn spec(&self) -> KernelSpec {
        match *self {
            ResolvedKernel::Gaussian { sigma } => KernelSpec::Gaussian { sigma: Bandwidth::Fixed(sigma) },
            ResolvedKernel::Laplacian { sigma } => KernelSpec::Laplacian { sigma },
            ResolvedKernel::Riesz { beta, epsilon } => KernelSpec::Riesz { beta, epsilon },
        }
    }

    /// `k(x, y)`.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        assert_eq!(x.len(), y.len(), "kernel arguments must share a dimension");
        struct Eval<'a>(&'a [f64], &'a [f64]);
        impl KernelVisitor for Eval<'_> {
            type Output = f64;
            fn visit<K: ScalarKernel>(self, k: &K) -> f64 {
                if self.0.len() == 1 {
                    return k.value_slope_1d(self.0[0] - self.1[0]).0;
                }
                let delta: Vec<f64> = self.0.iter().zip(self.1).map(|(a, b)| a - b).collect();
                let mut slope = alloc::vec![0.0; delta.len()];
                k.value_slope(&delta, &mut slope)
            }
        }
        self.dispatch(Eval(x, y))
    }

    /// `k(x, y)` with gradients flowing through both arguments:
    /// `∇k = Σ_d ∂κ/∂δ_d · (∇x_d − ∇y_d)`.
    pub fn eval_dual(&self, x: &[Dual], y: &[Dual]) -> Dual {
        assert_eq!(x.len(), y.len(), "kernel arguments must share a dimension");
        let delta: Vec<f64> = x.iter().zip(y).map(|(a, b)| a.value() - b.value()).collect();
        let mut slope = alloc::vec![0.0; delta.len()];
        struct Slope<'a>(&'a [f64], &'a mut [f64]);
        impl KernelVisitor for Slope<'_> {
            type Output = f64;
            fn visit<K: ScalarKernel>(self, k: &K) -> f64 {
                k.value_slope(self.0, self.1)
            }
        }
        let value = self.dispatch(Slope(&delta, &mut slope));
        let p = x.iter().chain(y).map(|d| d.dim()).max().unwrap_or(0);
        let mut grad = [0.0; crate::dual::MAX_PARAMS];
        for (dim, s) in slope.iter().enumerate() {
            let gx = x[dim].grad();
            let gy = y[dim].grad();
            for (i, g) in grad.iter_mut().enumerate().take(p) {
                let a = gx.get(i).copied().unwrap_or(0.0);
                let b = gy.get(i).copied().unwrap_or(0.0);
                *g += s * (a - b);
            }
        }
        Dual::from_parts(value, &grad[..p])
    }
}

/// `σ = median_{i<j} ‖x_i − x_j‖₂² / 2` over all unordered pairs of rows.
///
/// With this σ the Gaussian kernel is `exp(−‖x−y‖² / median‖·‖²)`. An even
/// number of pairs averages the two central values.
pub fn median_heuristic(values: &[f64], dim: usize) -> Result<f64> {
    if dim == 0 || !values.len().is_multiple_of(dim) {
        return Err(Error::config("data length is not a multiple of its dimension"));
    }
    let n = values.len() / dim;
    if n < 2 {
        return Err(Error::DegenerateData("median heuristic needs at least two points".into()));
    }
    let mut d2 = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        let xi = &values[i * dim..(i + 1) * dim];
        for j in (i + 1)..n {
            let xj = &values[j * dim..(j + 1) * dim];
            d2.push(xi.iter().zip(xj).map(|(a, b)| (a - b) * (a - b)).sum::<f64>());
        }
    }
    let len = d2.len();
    let mid = len / 2;
    let (lower, upper, _) = d2.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    let median = if len % 2 == 1 {
        upper
    } else {
        let below = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (below + upper)
    };
    if !(median > 0.0) {
        return Err(Error::DegenerateData("median pairwise distance is zero".into()));
    }
    Ok(0.5 * median)
}
