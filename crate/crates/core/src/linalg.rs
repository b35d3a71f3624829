//! Parameter-space primitives and small dense linear algebra.
//!
//! Parameter dimensions are tiny (a handful of rates), so symmetric
//! eigenproblems are solved with cyclic Jacobi rotations: O(p³), accurate to
//! round-off, and simple enough to audit.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::fmath;

/// A point `θ` in parameter space, in model units (rates per unit time).
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(transparent))]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::config("parameter vector must have at least one entry"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("parameter vector has non-finite entries"));
        }
        Ok(ParamVector(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Squared Euclidean distance to `other`.
    pub fn dist2(&self, other: &ParamVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b) * (a - b)).sum()
    }
}

impl core::ops::Index<usize> for ParamVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Axis-aligned box `Θ = Π [lower_i, upper_i]`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "BoxDomainRepr", into = "BoxDomainRepr"))]
pub struct BoxDomain {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[cfg(feature = "serde")]
#[derive(serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct BoxDomainRepr {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[cfg(feature = "serde")]
impl TryFrom<BoxDomainRepr> for BoxDomain {
    type Error = Error;
    fn try_from(r: BoxDomainRepr) -> Result<Self> {
        BoxDomain::new(r.lower, r.upper)
    }
}

#[cfg(feature = "serde")]
impl From<BoxDomain> for BoxDomainRepr {
    fn from(b: BoxDomain) -> Self {
        BoxDomainRepr { lower: b.lower, upper: b.upper }
    }
}

impl BoxDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch { expected: lower.len(), got: upper.len() });
        }
        if lower.is_empty() {
            return Err(Error::config("box domain must have at least one coordinate"));
        }
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::config(alloc::format!(
                    "box coordinate {i}: need finite lower < upper, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(BoxDomain { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(t, (lo, hi))| *lo <= *t && *t <= *hi)
    }

    /// Euclidean projection onto the box: a per-coordinate clamp.
    pub fn project(&self, theta: &ParamVector) -> Result<ParamVector> {
        let mut v = theta.0.clone();
        self.project_in_place(&mut v)?;
        Ok(ParamVector(v))
    }

    pub fn project_in_place(&self, theta: &mut [f64]) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: theta.len() });
        }
        for ((t, lo), hi) in theta.iter_mut().zip(&self.lower).zip(&self.upper) {
            *t = t.clamp(*lo, *hi);
        }
        Ok(())
    }

    /// Uniform draw from the box.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        let v = self
            .lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| lo + (hi - lo) * rng.random::<f64>())
            .collect();
        ParamVector(v)
    }
}

/// Free-function form of [`BoxDomain::project`].
pub fn project(theta: &ParamVector, domain: &BoxDomain) -> Result<ParamVector> {
    domain.project(theta)
}

/// Dense row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    dim: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn from_row_major(dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != dim * dim {
            return Err(Error::DimensionMismatch { expected: dim * dim, got: data.len() });
        }
        Ok(Matrix { dim, data })
    }

    pub fn identity(dim: usize) -> Self {
        let mut data = vec![0.0; dim * dim];
        for i in 0..dim {
            data[i * dim + i] = 1.0;
        }
        Matrix { dim, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn mul(&self, other: &Matrix) -> Matrix {
        let n = self.dim;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                let a = self.get(i, k);
                for j in 0..n {
                    out[i * n + j] += a * other.get(k, j);
                }
            }
        }
        Matrix { dim: n, data: out }
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.dim)
            .map(|i| (0..self.dim).map(|j| self.get(i, j) * v[j]).sum())
            .collect()
    }

    pub fn transpose(&self) -> Matrix {
        let n = self.dim;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                out[j * n + i] = self.get(i, j);
            }
        }
        Matrix { dim: n, data: out }
    }

    pub fn scale(&self, c: f64) -> Matrix {
        Matrix { dim: self.dim, data: self.data.iter().map(|x| x * c).collect() }
    }

    /// `‖self − I‖∞` (max absolute entry).
    pub fn max_abs_dev_from_identity(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.dim {
            for j in 0..self.dim {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((self.get(i, j) - target).abs());
            }
        }
        worst
    }

    /// `AᵀA`, exactly symmetric.
    pub fn gram(&self) -> SymMatrix {
        self.transpose().mul(self).into_sym()
    }

    pub fn into_sym(self) -> SymMatrix {
        SymMatrix::from_matrix(self)
    }
}

/// Symmetric matrix, stored symmetrised so that `m[i][j] == m[j][i]` exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    inner: Matrix,
}

/// Eigen-decomposition of a symmetric matrix. `vectors` holds eigenvectors as
/// columns, ordered like `values`.
#[derive(Debug, Clone)]
pub struct Eigen {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

impl SymMatrix {
    /// Builds from row-major entries, symmetrising as `(M + Mᵀ)/2`.
    pub fn from_row_major(dim: usize, data: Vec<f64>) -> Result<Self> {
        Ok(Self::from_matrix(Matrix::from_row_major(dim, data)?))
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let dim = rows.len();
        let mut data = Vec::with_capacity(dim * dim);
        for r in rows {
            if r.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: r.len() });
            }
            data.extend_from_slice(r);
        }
        Self::from_row_major(dim, data)
    }

    pub fn from_matrix(mut m: Matrix) -> Self {
        let n = m.dim;
        for i in 0..n {
            for j in (i + 1)..n {
                let avg = 0.5 * (m.data[i * n + j] + m.data[j * n + i]);
                m.data[i * n + j] = avg;
                m.data[j * n + i] = avg;
            }
        }
        SymMatrix { inner: m }
    }

    pub fn identity(dim: usize) -> Self {
        SymMatrix { inner: Matrix::identity(dim) }
    }

    pub fn zeros(dim: usize) -> Self {
        SymMatrix { inner: Matrix { dim, data: vec![0.0; dim * dim] } }
    }

    pub fn diag(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len());
        for (i, v) in d.iter().enumerate() {
            m.inner.data[i * d.len() + i] = *v;
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.inner.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.inner.get(i, j)
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.inner
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.inner.data
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.get(i, i)).sum()
    }

    pub fn scale(&self, c: f64) -> SymMatrix {
        SymMatrix { inner: self.inner.scale(c) }
    }

    pub fn is_exactly_symmetric(&self) -> bool {
        let n = self.dim();
        (0..n).all(|i| (0..n).all(|j| self.get(i, j).to_bits() == self.get(j, i).to_bits()))
    }

    /// Quadratic form `vᵀ M v`.
    pub fn quad_form(&self, v: &[f64]) -> f64 {
        let n = self.dim();
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc += v[i] * self.get(i, j) * v[j];
            }
        }
        acc
    }

    /// Cyclic Jacobi eigen-decomposition.
    pub fn eigen(&self) -> Eigen {
        let n = self.dim();
        let mut a = self.inner.data.clone();
        let mut v = Matrix::identity(n).data;
        let scale: f64 = fmath::sqrt(a.iter().map(|x| x * x).sum::<f64>());
        for _sweep in 0..100 {
            let mut off = 0.0;
            for i in 0..n {
                for j in (i + 1)..n {
                    off += a[i * n + j] * a[i * n + j];
                }
            }
            if fmath::sqrt(off) <= 1e-300 || fmath::sqrt(off) <= 1e-17 * scale {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a[p * n + q];
                    if apq == 0.0 {
                        continue;
                    }
                    let app = a[p * n + p];
                    let aqq = a[q * n + q];
                    let theta = (aqq - app) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + fmath::sqrt(theta * theta + 1.0));
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / fmath::sqrt(t * t + 1.0);
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[k * n + p];
                        let akq = a[k * n + q];
                        a[k * n + p] = c * akp - s * akq;
                        a[k * n + q] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[p * n + k];
                        let aqk = a[q * n + k];
                        a[p * n + k] = c * apk - s * aqk;
                        a[q * n + k] = s * apk + c * aqk;
                    }
                    for k in 0..n {
                        let vkp = v[k * n + p];
                        let vkq = v[k * n + q];
                        v[k * n + p] = c * vkp - s * vkq;
                        v[k * n + q] = s * vkp + c * vkq;
                    }
                }
            }
        }
        let values = (0..n).map(|i| a[i * n + i]).collect();
        Eigen { values, vectors: Matrix { dim: n, data: v } }
    }

    /// `V diag(f(λ)) Vᵀ`, symmetrised.
    fn spectral_map(eig: &Eigen, f: impl Fn(f64) -> f64) -> SymMatrix {
        let n = eig.values.len();
        let mut out = vec![0.0; n * n];
        for k in 0..n {
            let fk = f(eig.values[k]);
            for i in 0..n {
                let vik = eig.vectors.get(i, k) * fk;
                for j in 0..n {
                    out[i * n + j] += vik * eig.vectors.get(j, k);
                }
            }
        }
        SymMatrix::from_matrix(Matrix { dim: n, data: out })
    }

    pub fn mul(&self, other: &SymMatrix) -> Matrix {
        self.inner.mul(&other.inner)
    }
}

const SINGULAR_RTOL: f64 = 1e-12;

/// Inverse of a symmetric, numerically nonsingular matrix.
pub fn sym_inverse(m: &SymMatrix) -> Result<SymMatrix> {
    let eig = m.eigen();
    let max_abs = eig.values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let min_abs = eig.values.iter().fold(f64::INFINITY, |acc, v| acc.min(v.abs()));
    if !(max_abs > 0.0) || !(min_abs > SINGULAR_RTOL * max_abs) || !min_abs.is_finite() {
        return Err(Error::SingularMatrix { condition: max_abs / min_abs });
    }
    Ok(SymMatrix::spectral_map(&eig, |l| 1.0 / l))
}

/// Inverse square root `A` of a symmetric positive definite `M`, so that
/// `A M A = I`.
pub fn sym_inverse_sqrt(m: &SymMatrix) -> Result<SymMatrix> {
    let eig = m.eigen();
    let max = eig.values.iter().fold(f64::NEG_INFINITY, |acc, v| acc.max(*v));
    let min = eig.values.iter().fold(f64::INFINITY, |acc, v| acc.min(*v));
    if !(max > 0.0) || !(min > SINGULAR_RTOL * max) {
        return Err(Error::NotPositiveDefinite { min_eigenvalue: min });
    }
    Ok(SymMatrix::spectral_map(&eig, |l| 1.0 / fmath::sqrt(l)))
}
