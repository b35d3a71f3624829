//! Regularized incomplete gamma function and chi-square quantiles.

use crate::error::{Error, Result};
use crate::fmath;

const MAX_ITER: usize = 500;
const EPS: f64 = 1e-16;
const TINY: f64 = 1e-300;

/// Regularized incomplete gamma pair `(P(a, x), Q(a, x))`.
///
/// Series for `x < a + 1`, Lentz continued fraction otherwise; the other
/// member of the pair is the complement, so the accurate tail is always
/// computed directly.
pub fn gamma_pq(a: f64, x: f64) -> Result<(f64, f64)> {
    if !(a > 0.0) || !(x >= 0.0) || !x.is_finite() {
        return Err(Error::domain("incomplete gamma requires a > 0 and finite x >= 0"));
    }
    if x == 0.0 {
        return Ok((0.0, 1.0));
    }
    let log_prefactor = -x + a * fmath::ln(x) - libm::lgamma(a);
    if x < a + 1.0 {
        let mut ap = a;
        let mut term = 1.0 / a;
        let mut sum = term;
        for _ in 0..MAX_ITER {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * EPS {
                let p = fmath::exp(log_prefactor) * sum;
                return Ok((p, 1.0 - p));
            }
        }
        Err(Error::NoConvergence("incomplete gamma series".into()))
    } else {
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / TINY;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..MAX_ITER {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < TINY {
                d = TINY;
            }
            c = b + an / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < EPS {
                let q = fmath::exp(log_prefactor) * h;
                return Ok((1.0 - q, q));
            }
        }
        Err(Error::NoConvergence("incomplete gamma continued fraction".into()))
    }
}

/// Chi-square CDF with `dof` degrees of freedom.
pub fn chi2_cdf(q: f64, dof: u32) -> Result<f64> {
    if dof == 0 {
        return Err(Error::domain("chi-square needs at least one degree of freedom"));
    }
    if q <= 0.0 {
        return Ok(0.0);
    }
    Ok(gamma_pq(0.5 * dof as f64, 0.5 * q)?.0)
}

/// Chi-square survival function `1 − CDF`.
pub fn chi2_sf(q: f64, dof: u32) -> Result<f64> {
    if dof == 0 {
        return Err(Error::domain("chi-square needs at least one degree of freedom"));
    }
    if q <= 0.0 {
        return Ok(1.0);
    }
    Ok(gamma_pq(0.5 * dof as f64, 0.5 * q)?.1)
}

fn chi2_pdf(q: f64, dof: u32) -> f64 {
    if q <= 0.0 {
        return 0.0;
    }
    let a = 0.5 * dof as f64;
    fmath::exp((a - 1.0) * fmath::ln(q) - 0.5 * q - a * core::f64::consts::LN_2 - libm::lgamma(a))
}

/// `χ²_{1−α}(p)`: the point whose chi-square(`dof`) CDF equals `1 − alpha`.
///
/// Safeguarded Newton iteration inside a bisection bracket. The residual is
/// taken on whichever tail is smaller so small `alpha` keeps full precision.
pub fn chi2_quantile(alpha: f64, dof: u32) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain(alloc::format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if dof == 0 {
        return Err(Error::domain("chi-square needs at least one degree of freedom"));
    }
    let upper_tail = alpha < 0.5;
    // Signed residual, increasing in q.
    let residual = |q: f64| -> Result<f64> {
        if upper_tail {
            Ok(alpha - chi2_sf(q, dof)?)
        } else {
            Ok(chi2_cdf(q, dof)? - (1.0 - alpha))
        }
    };

    let mut lo = 0.0;
    let mut hi = dof as f64 + 1.0;
    while residual(hi)? < 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::NoConvergence("chi-square quantile bracket".into()));
        }
    }
    let mut q = 0.5 * (lo + hi);
    for _ in 0..200 {
        let r = residual(q)?;
        if r.abs() < 1e-15 {
            break;
        }
        if r < 0.0 {
            lo = q;
        } else {
            hi = q;
        }
        if (hi - lo) <= 4.0 * f64::EPSILON * hi {
            break;
        }
        let pdf = chi2_pdf(q, dof);
        let newton = if pdf > 0.0 { q - r / pdf } else { f64::NAN };
        q = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
    }
    Ok(q)
}
