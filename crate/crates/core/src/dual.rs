//! Forward-mode dual numbers.
//!
//! A [`Dual`] carries a value and its gradient with respect to the `p`
//! simulation parameters. Gradients live in a fixed inline buffer of
//! [`MAX_PARAMS`] entries so duals are `Copy` and never allocate; only the
//! first `len` entries are meaningful.

use alloc::vec::Vec;
use core::ops::{Add, Div, Mul, Neg, Sub};

use crate::error::{Error, Result};
use crate::fmath;

/// Largest supported parameter dimension.
pub const MAX_PARAMS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual {
    value: f64,
    grad: [f64; MAX_PARAMS],
    len: u8,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UnaryOp {
    Neg,
    Exp,
    Ln,
    Sqrt,
    /// `sqrt(x² + ε)`
    AbsSmooth(f64),
    /// `max(x, 0)` with derivative 0 at the kink.
    Relu,
    PowConst(f64),
}

impl Dual {
    /// A constant: zero gradient of length `p`.
    pub fn constant(value: f64, p: usize) -> Self {
        assert!(p <= MAX_PARAMS, "parameter dimension {p} exceeds {MAX_PARAMS}");
        Dual { value, grad: [0.0; MAX_PARAMS], len: p as u8 }
    }

    /// The `i`-th coordinate seeded with the unit tangent `e_i`.
    pub fn seed(value: f64, i: usize, p: usize) -> Self {
        let mut d = Self::constant(value, p);
        d.grad[i] = 1.0;
        d
    }

    pub fn from_parts(value: f64, grad: &[f64]) -> Self {
        let mut d = Self::constant(value, grad.len());
        d.grad[..grad.len()].copy_from_slice(grad);
        d
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.value
    }

    #[inline]
    pub fn grad(&self) -> &[f64] {
        &self.grad[..self.len as usize]
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.len as usize
    }

    /// Chain rule for a scalar function with value `f` and derivative `df` at
    /// `self.value`.
    #[inline]
    fn chain(&self, f: f64, df: f64) -> Dual {
        let mut out = Dual { value: f, grad: [0.0; MAX_PARAMS], len: self.len };
        for i in 0..self.len as usize {
            out.grad[i] = df * self.grad[i];
        }
        out
    }

    #[inline]
    fn zip(a: &Dual, b: &Dual, value: f64, da: f64, db: f64) -> Dual {
        let len = a.len.max(b.len);
        let mut out = Dual { value, grad: [0.0; MAX_PARAMS], len };
        for i in 0..len as usize {
            out.grad[i] = da * a.grad[i] + db * b.grad[i];
        }
        out
    }

    pub fn exp(self) -> Dual {
        let e = fmath::exp(self.value);
        self.chain(e, e)
    }

    pub fn ln(self) -> Result<Dual> {
        if !(self.value > 0.0) {
            return Err(Error::domain(alloc::format!("ln of non-positive value {}", self.value)));
        }
        Ok(self.chain(fmath::ln(self.value), 1.0 / self.value))
    }

    pub fn sqrt(self) -> Result<Dual> {
        if !(self.value > 0.0) {
            return Err(Error::domain(alloc::format!("sqrt of non-positive value {}", self.value)));
        }
        let s = fmath::sqrt(self.value);
        Ok(self.chain(s, 0.5 / s))
    }

    /// `sqrt(x² + ε)`, a smooth stand-in for `|x|`. With `ε = 0` the
    /// derivative at `x = 0` is taken as 0.
    pub fn abs_smooth(self, eps: f64) -> Dual {
        let s = fmath::sqrt(self.value * self.value + eps);
        let ds = if s > 0.0 { self.value / s } else { 0.0 };
        self.chain(s, ds)
    }

    #[inline]
    pub fn relu(self) -> Dual {
        if self.value > 0.0 {
            self
        } else {
            Dual { value: 0.0, grad: [0.0; MAX_PARAMS], len: self.len }
        }
    }

    pub fn powf(self, c: f64) -> Result<Dual> {
        let integer = c == libm::trunc(c);
        if !integer && !(self.value > 0.0) {
            return Err(Error::domain("non-integer power of a non-positive value"));
        }
        if c < 0.0 && self.value == 0.0 {
            return Err(Error::domain("negative power of zero"));
        }
        let f = fmath::powf(self.value, c);
        let df = if c == 0.0 { 0.0 } else { c * fmath::powf(self.value, c - 1.0) };
        Ok(self.chain(f, df))
    }

    pub fn checked_div(self, rhs: Dual) -> Result<Dual> {
        if rhs.value == 0.0 {
            return Err(Error::domain("division by a dual with zero value"));
        }
        Ok(self / rhs)
    }
}

impl Add for Dual {
    type Output = Dual;
    #[inline]
    fn add(self, rhs: Dual) -> Dual {
        Dual::zip(&self, &rhs, self.value + rhs.value, 1.0, 1.0)
    }
}

impl Sub for Dual {
    type Output = Dual;
    #[inline]
    fn sub(self, rhs: Dual) -> Dual {
        Dual::zip(&self, &rhs, self.value - rhs.value, 1.0, -1.0)
    }
}

impl Mul for Dual {
    type Output = Dual;
    #[inline]
    fn mul(self, rhs: Dual) -> Dual {
        Dual::zip(&self, &rhs, self.value * rhs.value, rhs.value, self.value)
    }
}

impl Div for Dual {
    type Output = Dual;
    #[inline]
    fn div(self, rhs: Dual) -> Dual {
        let inv = 1.0 / rhs.value;
        let q = self.value / rhs.value;
        Dual::zip(&self, &rhs, q, inv, -q * inv)
    }
}

impl Neg for Dual {
    type Output = Dual;
    #[inline]
    fn neg(self) -> Dual {
        self.chain(-self.value, -1.0)
    }
}

impl Add<f64> for Dual {
    type Output = Dual;
    #[inline]
    fn add(self, rhs: f64) -> Dual {
        Dual { value: self.value + rhs, ..self }
    }
}

impl Mul<f64> for Dual {
    type Output = Dual;
    #[inline]
    fn mul(self, rhs: f64) -> Dual {
        self.chain(self.value * rhs, rhs)
    }
}

/// Seeds `θ` so that coordinate `i` carries tangent `e_i`.
pub fn lift_param(theta: &[f64]) -> Vec<Dual> {
    let p = theta.len();
    theta.iter().enumerate().map(|(i, &v)| Dual::seed(v, i, p)).collect()
}

pub fn dual_arith(a: Dual, b: Dual, op: BinaryOp) -> Result<Dual> {
    Ok(match op {
        BinaryOp::Add => a + b,
        BinaryOp::Sub => a - b,
        BinaryOp::Mul => a * b,
        BinaryOp::Div => a.checked_div(b)?,
    })
}

pub fn dual_unary(a: Dual, op: UnaryOp) -> Result<Dual> {
    match op {
        UnaryOp::Neg => Ok(-a),
        UnaryOp::Exp => Ok(a.exp()),
        UnaryOp::Ln => a.ln(),
        UnaryOp::Sqrt => a.sqrt(),
        UnaryOp::AbsSmooth(eps) => {
            if !(eps >= 0.0) {
                return Err(Error::domain("smoothing epsilon must be >= 0"));
            }
            Ok(a.abs_smooth(eps))
        }
        UnaryOp::Relu => Ok(a.relu()),
        UnaryOp::PowConst(c) => a.powf(c),
    }
}

/// Largest relative discrepancy between the forward-mode gradient of `f` at
/// `theta` and a central finite difference with step `h`:
/// `max_i |ad_i − fd_i| / (1 + |fd_i|)`.
///
/// `f` must be deterministic (reuse the same latent draws on every call).
pub fn grad_check<F>(mut f: F, theta: &[f64], h: f64) -> Result<f64>
where
    F: FnMut(&[Dual]) -> Result<Dual>,
{
    let ad = f(&lift_param(theta))?;
    let p = theta.len();
    let mut worst = 0.0f64;
    let mut shifted = theta.to_vec();
    for i in 0..p {
        shifted[i] = theta[i] + h;
        let up = f(&lift_param(&shifted))?.value();
        shifted[i] = theta[i] - h;
        let down = f(&lift_param(&shifted))?.value();
        shifted[i] = theta[i];
        let fd = (up - down) / (2.0 * h);
        worst = worst.max((ad.grad()[i] - fd).abs() / (1.0 + fd.abs()));
    }
    Ok(worst)
}
