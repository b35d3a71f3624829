//! The kernel simulated score and its U-statistic gradient.
//!
//! ```text
//! L̂(θ) = 1/(n(n−1)) Σ_{i≠j} k(Y_i, Y_j) − 2/(mn) Σ_i Σ_j k(Y_j, X_i)
//! ```
//!
//! The gradient is accumulated as one weight per simulated coordinate,
//! `∇L̂ = Σ_j Σ_c w_{jc} ∇Y_{jc}`, so the O(n² + mn) pair loops only touch
//! scalars and the `p`-dimensional work stays O(n p).

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::dual::Dual;
use crate::error::{Error, Result};
use crate::kernel::{KernelSpec, KernelVisitor, ResolvedKernel, ScalarKernel};
use crate::linalg::BoxDomain;
use crate::sim::GG1Model;

/// `n` simulated outputs of dimension `d`, each with a gradient in `θ ∈ ℝᵖ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimSample {
    dim: usize,
    params: usize,
    values: Vec<f64>,
    /// Layout `[replication][output coordinate][parameter]`.
    grads: Vec<f64>,
}

impl SimSample {
    pub fn with_capacity(n: usize, dim: usize, params: usize) -> Self {
        SimSample {
            dim,
            params,
            values: Vec::with_capacity(n * dim),
            grads: Vec::with_capacity(n * dim * params),
        }
    }

    /// Builds a sample from dual rows.
    pub fn from_duals(rows: &[Vec<Dual>], params: usize) -> Result<Self> {
        let dim = rows.first().map_or(1, |r| r.len());
        let mut s = SimSample::with_capacity(rows.len(), dim, params);
        for r in rows {
            if r.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: r.len() });
            }
            s.push(r);
        }
        Ok(s)
    }

    pub fn push(&mut self, row: &[Dual]) {
        debug_assert_eq!(row.len(), self.dim);
        for x in row {
            self.values.push(x.value());
            let g = x.grad();
            for q in 0..self.params {
                self.grads.push(g.get(q).copied().unwrap_or(0.0));
            }
        }
    }

    pub fn len(&self) -> usize {
        self.values.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn params(&self) -> usize {
        self.params
    }

    /// Primal outputs, row-major.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `∇_θ Y_{i,c}`.
    pub fn grad(&self, i: usize, c: usize) -> &[f64] {
        let start = (i * self.dim + c) * self.params;
        &self.grads[start..start + self.params]
    }

    /// Row `i` as duals.
    pub fn row(&self, i: usize) -> Vec<Dual> {
        (0..self.dim)
            .map(|c| Dual::from_parts(self.values[i * self.dim + c], self.grad(i, c)))
            .collect()
    }

    /// `Σ_{j,c} w_{jc} ∇Y_{jc}`.
    fn contract(&self, weights: &[f64]) -> Vec<f64> {
        let p = self.params;
        let mut out = vec![0.0; p];
        for (w, g) in weights.iter().zip(self.grads.chunks_exact(p.max(1))) {
            for q in 0..p {
                out[q] += w * g[q];
            }
        }
        out
    }
}

/// Value and gradient of `L̂` for a simulated sample against data `x`
/// (row-major, `dim` columns). Data points are constants in `θ`.
pub fn kernel_simulated_score(kernel: &ResolvedKernel, x: &[f64], y: &SimSample) -> Result<(f64, Vec<f64>)> {
    let d = y.dim();
    let n = y.len();
    if n < 2 {
        return Err(Error::config("the U-statistic needs at least two simulated points"));
    }
    if d == 0 || !x.len().is_multiple_of(d) || x.is_empty() {
        return Err(Error::DimensionMismatch { expected: d, got: x.len() });
    }
    let m = x.len() / d;

    struct Pairs<'a> {
        x: &'a [f64],
        y: &'a [f64],
        d: usize,
        n: usize,
        m: usize,
    }
    impl KernelVisitor for Pairs<'_> {
        // (Σ_{i<j} k(Y_i,Y_j), Σ_{i,j} k(Y_j,X_i), weights)
        type Output = (f64, f64, Vec<f64>, Vec<f64>);
        fn visit<K: ScalarKernel>(self, k: &K) -> Self::Output {
            let Pairs { x, y, d, n, m } = self;
            let mut w_yy = vec![0.0; n * d];
            let mut w_yx = vec![0.0; n * d];
            let (mut s_yy, mut s_yx) = (0.0, 0.0);
            if d == 1 {
                for i in 0..n {
                    let yi = y[i];
                    let mut wi = 0.0;
                    for j in (i + 1)..n {
                        let (v, s) = k.value_slope_1d(yi - y[j]);
                        s_yy += v;
                        wi += s;
                        w_yy[j] -= s;
                    }
                    w_yy[i] += wi;
                    let mut wj = 0.0;
                    for &xv in x {
                        let (v, s) = k.value_slope_1d(yi - xv);
                        s_yx += v;
                        wj += s;
                    }
                    w_yx[i] = wj;
                }
            } else {
                let mut delta = vec![0.0; d];
                let mut slope = vec![0.0; d];
                for i in 0..n {
                    let yi = &y[i * d..(i + 1) * d];
                    for j in (i + 1)..n {
                        for c in 0..d {
                            delta[c] = yi[c] - y[j * d + c];
                        }
                        s_yy += k.value_slope(&delta, &mut slope);
                        for c in 0..d {
                            w_yy[i * d + c] += slope[c];
                            w_yy[j * d + c] -= slope[c];
                        }
                    }
                    for r in 0..m {
                        for c in 0..d {
                            delta[c] = yi[c] - x[r * d + c];
                        }
                        s_yx += k.value_slope(&delta, &mut slope);
                        for c in 0..d {
                            w_yx[i * d + c] += slope[c];
                        }
                    }
                }
            }
            (s_yy, s_yx, w_yy, w_yx)
        }
    }

    let (s_yy, s_yx, w_yy, w_yx) = match *kernel {
        ResolvedKernel::Riesz { beta, epsilon } if d == 1 && beta == 1.0 && epsilon == 0.0 => {
            energy_sums_1d(x, y.values())
        }
        _ => kernel.dispatch(Pairs { x, y: y.values(), d, n, m }),
    };
    let c_yy = 2.0 / (n as f64 * (n as f64 - 1.0));
    let c_yx = 2.0 / (m as f64 * n as f64);
    let weights: Vec<f64> = w_yy.iter().zip(&w_yx).map(|(a, b)| c_yy * a - c_yx * b).collect();
    let value = c_yy * s_yy - c_yx * s_yx;
    Ok((value, y.contract(&weights)))
}

/// The same four sums as the pair loop for `k(δ) = −½|δ|` in one
/// dimension, from sorted orders in `O((n + m) log(n + m))`. Ties get slope
/// zero, matching the pairwise kernel at `ε = 0`.
fn energy_sums_1d(x: &[f64], y: &[f64]) -> (f64, f64, Vec<f64>, Vec<f64>) {
    let n = y.len();
    let m = x.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_unstable_by(|&a, &b| y[a].total_cmp(&y[b]));
    let mut xs = x.to_vec();
    xs.sort_unstable_by(f64::total_cmp);
    let mut prefix = Vec::with_capacity(m + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for &v in &xs {
        acc += v;
        prefix.push(acc);
    }

    // Σ_{i<j} |y_(j) − y_(i)| = Σ_k (2k − n + 1) y_(k).
    let mut abs_yy = 0.0;
    let mut w_yy = vec![0.0; n];
    let mut k = 0;
    while k < n {
        let v = y[order[k]];
        let mut end = k + 1;
        while end < n && y[order[end]] == v {
            end += 1;
        }
        // Everything before the tie group is smaller, everything after larger.
        let below = k as f64;
        let above = (n - end) as f64;
        for (r, &idx) in order[k..end].iter().enumerate() {
            abs_yy += (2.0 * (k + r) as f64 - (n as f64 - 1.0)) * v;
            w_yy[idx] = -0.5 * (below - above);
        }
        k = end;
    }

    let mut abs_yx = 0.0;
    let mut w_yx = vec![0.0; n];
    let total = prefix[m];
    for (i, &v) in y.iter().enumerate() {
        let lt = xs.partition_point(|&t| t < v);
        let le = lt + xs[lt..].partition_point(|&t| t <= v);
        abs_yx += v * lt as f64 - prefix[lt] + (total - prefix[lt]) - v * (m - lt) as f64;
        w_yx[i] = -0.5 * (lt as f64 - (m - le) as f64);
    }
    (-0.5 * abs_yy, -0.5 * abs_yx, w_yy, w_yx)
}

/// `1/(m(m−1)) Σ_{i≠j} k(X_i, X_j)`, the `θ`-free part of the squared MMD.
pub fn data_self_term(kernel: &ResolvedKernel, x: &[f64], dim: usize) -> Result<f64> {
    if dim == 0 || !x.len().is_multiple_of(dim) {
        return Err(Error::DimensionMismatch { expected: dim, got: x.len() });
    }
    let m = x.len() / dim;
    if m < 2 {
        return Err(Error::config("the data U-statistic needs at least two points"));
    }
    let mut s = 0.0;
    for i in 0..m {
        for j in (i + 1)..m {
            s += kernel.eval(&x[i * dim..(i + 1) * dim], &x[j * dim..(j + 1) * dim]);
        }
    }
    Ok(2.0 * s / (m as f64 * (m as f64 - 1.0)))
}

/// Everything a calibration needs besides the optimiser settings.
#[derive(Debug, Clone)]
pub struct ScoreContext {
    data: Vec<f64>,
    dim: usize,
    kernel: ResolvedKernel,
    model: GG1Model,
    domain: BoxDomain,
    n: usize,
}

impl ScoreContext {
    /// Resolves the kernel on `data` (the median heuristic is computed here,
    /// once) and validates the pieces against each other.
    pub fn new(
        data: Vec<f64>,
        kernel: &KernelSpec,
        model: GG1Model,
        domain: BoxDomain,
        n: usize,
    ) -> Result<Self> {
        kernel.validate()?;
        let dim = model.output_dim();
        let resolved = kernel.resolve(&data, dim)?;
        Self::with_resolved(data, resolved, model, domain, n)
    }

    /// As [`ScoreContext::new`] with an already fixed kernel.
    pub fn with_resolved(
        data: Vec<f64>,
        kernel: ResolvedKernel,
        model: GG1Model,
        domain: BoxDomain,
        n: usize,
    ) -> Result<Self> {
        model.validate()?;
        let dim = model.output_dim();
        if !data.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch { expected: dim, got: data.len() % dim });
        }
        if data.len() / dim < 2 {
            return Err(Error::config("at least two data points are required"));
        }
        if n < 2 {
            return Err(Error::config("simulated sample size n must be at least 2"));
        }
        if domain.dim() != model.num_params() {
            return Err(Error::DimensionMismatch { expected: model.num_params(), got: domain.dim() });
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::config(alloc::format!("data contains a non-finite value {bad}")));
        }
        Ok(ScoreContext { data, dim, kernel, model, domain, n })
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn m(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `λ = n / (m + n)`.
    pub fn ratio(&self) -> f64 {
        self.n as f64 / (self.m() + self.n) as f64
    }

    pub fn kernel(&self) -> &ResolvedKernel {
        &self.kernel
    }

    pub fn model(&self) -> &GG1Model {
        &self.model
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn params(&self) -> usize {
        self.model.num_params()
    }

    pub fn score(&self, y: &SimSample) -> Result<(f64, Vec<f64>)> {
        kernel_simulated_score(&self.kernel, &self.data, y)
    }

    pub fn data_self_term(&self) -> Result<f64> {
        data_self_term(&self.kernel, &self.data, self.dim)
    }

    /// Draws a fresh simulated sample of size `n` at `θ` and returns
    /// `(L̂, ∇L̂)`.
    pub fn score_gradient_step<R: Rng + ?Sized>(&self, theta: &[f64], rng: &mut R) -> Result<(f64, Vec<f64>)> {
        if theta.len() != self.domain.dim() {
            return Err(Error::DimensionMismatch { expected: self.domain.dim(), got: theta.len() });
        }
        if !self.domain.contains(theta) {
            return Err(Error::domain("parameter lies outside the domain"));
        }
        let y = self.model.simulate_model_sample(theta, self.n, rng)?;
        self.score(&y)
    }
}
