//! Sandwich covariance and confidence ellipsoids.
//!
//! With `Ĥ` the Hessian of the score at `θ̂` and `Σ̂` the covariance of the
//! per-observation gradient means, the set
//!
//! ```text
//! { θ : ‖√m Σ̂^{-1/2} Ĥ (θ − θ̂)‖² ≤ χ²_{1−α}(p) }
//! ```
//!
//! is asymptotically valid even when no parameter reproduces the data
//! distribution. Both matrices are estimated on one frozen latent sample.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::fmath;
use crate::kernel::{KernelVisitor, ScalarKernel};
use crate::linalg::{sym_inverse, sym_inverse_sqrt, BoxDomain, Matrix, ParamVector, SymMatrix};
use crate::score::{ScoreContext, SimSample};
use crate::sim::LatentBlock;
use crate::special::chi2_quantile;

/// Finite-difference steps are halved when `θ̂ ± h eᵢ` leaves the domain,
/// down to this floor.
pub const MIN_HESSIAN_STEP: f64 = 1e-4;

/// Plug-in estimates `Ĥ`, `Σ̂` at `θ̂`.
#[derive(Debug, Clone, PartialEq)]
pub struct SandwichEstimate {
    pub h_hat: SymMatrix,
    pub sigma_hat: SymMatrix,
    pub m: usize,
    pub n_c: usize,
    /// Finite-difference step actually used for `Ĥ`.
    pub step: f64,
}

impl SandwichEstimate {
    /// Godambe matrix `Ĉ = Ĥ⁻¹ Σ̂ Ĥ⁻¹`.
    pub fn godambe(&self) -> Result<SymMatrix> {
        let hi = sym_inverse(&self.h_hat)?;
        Ok(hi.mul(&self.sigma_hat).mul(hi.as_matrix()).into_sym())
    }
}

/// `Σ̂ = 4/(m−1) Σᵢ (μ̂ᵢ − μ̄)(μ̂ᵢ − μ̄)ᵀ` with
/// `μ̂ᵢ = (1/n_c) Σⱼ ∇_θ k(G_θ(Zⱼ), Xᵢ)` on the given latent blocks.
pub fn estimate_sigma_frozen(ctx: &ScoreContext, theta: &[f64], blocks: &[LatentBlock]) -> Result<SymMatrix> {
    if ctx.m() < 2 {
        return Err(Error::config("Sigma estimation needs m >= 2"));
    }
    if blocks.len() < 2 {
        return Err(Error::config("n_c must be at least 2"));
    }
    let y = ctx.model().push_latents(theta, blocks)?;
    let mus = gradient_means(ctx, &y);
    let p = y.params();
    let m = ctx.m();
    let mut mean = vec![0.0; p];
    for mu in mus.chunks_exact(p) {
        for q in 0..p {
            mean[q] += mu[q] / m as f64;
        }
    }
    let mut out = vec![0.0; p * p];
    for mu in mus.chunks_exact(p) {
        for a in 0..p {
            for b in 0..p {
                out[a * p + b] += (mu[a] - mean[a]) * (mu[b] - mean[b]);
            }
        }
    }
    let c = 4.0 / (m as f64 - 1.0);
    out.iter_mut().for_each(|v| *v *= c);
    Ok(SymMatrix::from_matrix(Matrix::from_row_major(p, out)?))
}

/// `μ̂ᵢ` for every data row, flattened `[i][q]`.
fn gradient_means(ctx: &ScoreContext, y: &SimSample) -> Vec<f64> {
    struct Means<'a> {
        x: &'a [f64],
        y: &'a SimSample,
    }
    impl KernelVisitor for Means<'_> {
        type Output = Vec<f64>;
        fn visit<K: ScalarKernel>(self, k: &K) -> Vec<f64> {
            let (d, p, n) = (self.y.dim(), self.y.params(), self.y.len());
            let vals = self.y.values();
            let m = self.x.len() / d;
            let mut out = vec![0.0; m * p];
            let mut delta = vec![0.0; d];
            let mut slope = vec![0.0; d];
            for i in 0..m {
                let xi = &self.x[i * d..(i + 1) * d];
                let acc = &mut out[i * p..(i + 1) * p];
                for j in 0..n {
                    if d == 1 {
                        slope[0] = k.value_slope_1d(vals[j] - xi[0]).1;
                    } else {
                        for c in 0..d {
                            delta[c] = vals[j * d + c] - xi[c];
                        }
                        k.value_slope(&delta, &mut slope);
                    }
                    for (c, s) in slope.iter().enumerate() {
                        for (a, g) in acc.iter_mut().zip(self.y.grad(j, c)) {
                            *a += s * g;
                        }
                    }
                }
                acc.iter_mut().for_each(|v| *v /= n as f64);
            }
            out
        }
    }
    ctx.kernel().dispatch(Means { x: ctx.data(), y })
}

/// Central differences of a gradient map, symmetrised:
/// `Ĥ[:, i] = (g(θ + h eᵢ) − g(θ − h eᵢ)) / 2h`.
///
/// With a domain, `h` is halved until every probe lies inside it; below
/// [`MIN_HESSIAN_STEP`] this fails. Returns the matrix and the step used.
pub fn central_difference_hessian<F>(
    mut grad: F,
    theta: &[f64],
    h: f64,
    domain: Option<&BoxDomain>,
) -> Result<(SymMatrix, f64)>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    if !(h > 0.0) {
        return Err(Error::config("finite-difference step must be > 0"));
    }
    let p = theta.len();
    let mut h = h;
    if let Some(dom) = domain {
        let fits = |h: f64| {
            (0..p).all(|i| {
                theta[i] - h >= dom.lower()[i] && theta[i] + h <= dom.upper()[i]
            })
        };
        while !fits(h) {
            h *= 0.5;
            if h < MIN_HESSIAN_STEP {
                return Err(Error::domain("Hessian probes leave the domain even at the minimum step"));
            }
        }
    }
    let mut data = vec![0.0; p * p];
    let mut probe = theta.to_vec();
    for i in 0..p {
        probe[i] = theta[i] + h;
        let up = grad(&probe)?;
        probe[i] = theta[i] - h;
        let down = grad(&probe)?;
        probe[i] = theta[i];
        if up.len() != p || down.len() != p {
            return Err(Error::DimensionMismatch { expected: p, got: up.len() });
        }
        for r in 0..p {
            data[r * p + i] = (up[r] - down[r]) / (2.0 * h);
        }
    }
    Ok((SymMatrix::from_matrix(Matrix::from_row_major(p, data)?), h))
}

/// Score Hessian on frozen latent blocks (the same blocks at every probe).
pub fn estimate_hessian_frozen(
    ctx: &ScoreContext,
    theta: &[f64],
    blocks: &[LatentBlock],
    h: f64,
) -> Result<(SymMatrix, f64)> {
    let grad = |t: &[f64]| -> Result<Vec<f64>> {
        let y = ctx.model().push_latents(t, blocks)?;
        Ok(ctx.score(&y)?.1)
    };
    central_difference_hessian(grad, theta, h, Some(ctx.domain()))
}

/// `Σ̂` on a freshly drawn latent sample of size `n_c`.
pub fn estimate_sigma<R: Rng + ?Sized>(ctx: &ScoreContext, theta: &[f64], n_c: usize, rng: &mut R) -> Result<SymMatrix> {
    let blocks = ctx.model().draw_latents(n_c, rng)?;
    estimate_sigma_frozen(ctx, theta, &blocks)
}

/// `Ĥ` on a freshly drawn latent sample of size `n_c`.
pub fn estimate_hessian<R: Rng + ?Sized>(
    ctx: &ScoreContext,
    theta: &[f64],
    n_c: usize,
    h: f64,
    rng: &mut R,
) -> Result<SymMatrix> {
    let blocks = ctx.model().draw_latents(n_c, rng)?;
    Ok(estimate_hessian_frozen(ctx, theta, &blocks, h)?.0)
}

/// Both plug-in matrices on one shared latent sample.
pub fn sandwich<R: Rng + ?Sized>(
    ctx: &ScoreContext,
    theta: &[f64],
    n_c: usize,
    h: f64,
    rng: &mut R,
) -> Result<SandwichEstimate> {
    let blocks = ctx.model().draw_latents(n_c, rng)?;
    let sigma_hat = estimate_sigma_frozen(ctx, theta, &blocks)?;
    let (h_hat, step) = estimate_hessian_frozen(ctx, theta, &blocks, h)?;
    Ok(SandwichEstimate { h_hat, sigma_hat, m: ctx.m(), n_c, step })
}

/// Confidence ellipsoid `{θ : ‖W(θ − c)‖² ≤ χ²_{1−α}(p)}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceSet {
    center: ParamVector,
    /// `W = √m Σ̂^{-1/2} Ĥ`; not symmetric in general.
    whitener: Matrix,
    /// `WᵀW`.
    precision: SymMatrix,
    threshold: f64,
    alpha: f64,
}

/// Shape of a confidence set in one or two dimensions.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum SetGeometry {
    Interval {
        lo: f64,
        hi: f64,
        width: f64,
    },
    Ellipse {
        center: [f64; 2],
        /// Semi-axis lengths, matching the eigen-axes in `axis_directions`.
        semi_axes: [f64; 2],
        axis_directions: [[f64; 2]; 2],
        /// Angle of the first semi-axis from the first coordinate axis.
        angle_rad: f64,
        /// Axis-aligned bounding box extents.
        width: f64,
        height: f64,
        boundary_points: Vec<[f64; 2]>,
    },
}

impl SetGeometry {
    pub fn width(&self) -> f64 {
        match self {
            SetGeometry::Interval { width, .. } | SetGeometry::Ellipse { width, .. } => *width,
        }
    }

    pub fn height(&self) -> Option<f64> {
        match self {
            SetGeometry::Interval { .. } => None,
            SetGeometry::Ellipse { height, .. } => Some(*height),
        }
    }
}

pub const DEFAULT_BOUNDARY_POINTS: usize = 256;

impl ConfidenceSet {
    /// Builds the set from plug-in estimates. Fails with
    /// `NotPositiveDefinite` for a degenerate `Σ̂` and `SingularMatrix` for a
    /// singular `Ĥ`.
    pub fn build(sandwich: &SandwichEstimate, center: &ParamVector, alpha: f64) -> Result<Self> {
        let p = center.dim();
        if sandwich.h_hat.dim() != p || sandwich.sigma_hat.dim() != p {
            return Err(Error::DimensionMismatch { expected: p, got: sandwich.h_hat.dim() });
        }
        let root = sym_inverse_sqrt(&sandwich.sigma_hat)?;
        sym_inverse(&sandwich.h_hat)?;
        let whitener = root.mul(&sandwich.h_hat).scale(fmath::sqrt(sandwich.m as f64));
        Self::from_whitener(center.clone(), whitener, alpha)
    }

    /// Builds the set from an explicit whitening matrix.
    pub fn from_whitener(center: ParamVector, whitener: Matrix, alpha: f64) -> Result<Self> {
        let p = center.dim();
        if whitener.dim() != p {
            return Err(Error::DimensionMismatch { expected: p, got: whitener.dim() });
        }
        if whitener.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("whitener has non-finite entries"));
        }
        let threshold = chi2_quantile(alpha, p as u32)?;
        let precision = whitener.gram();
        Ok(ConfidenceSet { center, whitener, precision, threshold, alpha })
    }

    pub fn center(&self) -> &ParamVector {
        &self.center
    }

    pub fn whitener(&self) -> &Matrix {
        &self.whitener
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn dim(&self) -> usize {
        self.center.dim()
    }

    /// `‖W(θ − c)‖²`.
    pub fn statistic(&self, theta: &[f64]) -> Result<f64> {
        if theta.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: theta.len() });
        }
        let diff: Vec<f64> = theta.iter().zip(self.center.as_slice()).map(|(a, b)| a - b).collect();
        Ok(self.whitener.mul_vec(&diff).iter().map(|v| v * v).sum())
    }

    /// Closed-set membership.
    pub fn contains(&self, theta: &[f64]) -> Result<bool> {
        Ok(self.statistic(theta)? <= self.threshold)
    }

    /// Interval for `p = 1`, ellipse with `points` boundary samples for
    /// `p = 2`.
    pub fn geometry(&self, points: usize) -> Result<SetGeometry> {
        match self.dim() {
            1 => {
                let w = self.whitener.get(0, 0).abs();
                if !(w > 0.0) {
                    return Err(Error::SingularMatrix { condition: f64::INFINITY });
                }
                let half = fmath::sqrt(self.threshold) / w;
                let c = self.center[0];
                Ok(SetGeometry::Interval { lo: c - half, hi: c + half, width: 2.0 * half })
            }
            2 => {
                let eig = self.precision.eigen();
                if eig.values.iter().any(|v| !(*v > 0.0)) {
                    return Err(Error::NotPositiveDefinite {
                        min_eigenvalue: eig.values.iter().copied().fold(f64::INFINITY, f64::min),
                    });
                }
                let axes = [fmath::sqrt(self.threshold / eig.values[0]), fmath::sqrt(self.threshold / eig.values[1])];
                let dirs = [
                    [eig.vectors.get(0, 0), eig.vectors.get(1, 0)],
                    [eig.vectors.get(0, 1), eig.vectors.get(1, 1)],
                ];
                let cov = sym_inverse(&self.precision)?;
                let c = [self.center[0], self.center[1]];
                let boundary_points = (0..points)
                    .map(|k| {
                        let phi = 2.0 * core::f64::consts::PI * k as f64 / points as f64;
                        let (a, b) = (axes[0] * fmath::cos(phi), axes[1] * fmath::sin(phi));
                        [c[0] + a * dirs[0][0] + b * dirs[1][0], c[1] + a * dirs[0][1] + b * dirs[1][1]]
                    })
                    .collect();
                Ok(SetGeometry::Ellipse {
                    center: c,
                    semi_axes: axes,
                    axis_directions: dirs,
                    angle_rad: fmath::atan2(dirs[0][1], dirs[0][0]),
                    width: 2.0 * fmath::sqrt(self.threshold * cov.get(0, 0)),
                    height: 2.0 * fmath::sqrt(self.threshold * cov.get(1, 1)),
                    boundary_points,
                })
            }
            p => Err(Error::GeometryUnsupported(p)),
        }
    }
}
