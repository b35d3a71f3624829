//! G/G/1 queue pushforward.
//!
//! A replication draws `B + T` rate-one latent pairs from the reference
//! measure, scales them into service and inter-arrival times
//! (`S = z_s / μ`, `A = z_a / λ`) and runs the Lindley recursion
//! `W₀ = 0, W_{j+1} = max(0, W_j + S_j − A_j)`. The output is the mean
//! waiting time over the last `T` customers. Rates can be `θ` coordinates,
//! which makes the output differentiable in `θ` for fixed latents.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::dual::Dual;
use crate::error::{Error, Result};
use crate::score::SimSample;

/// Reference family for one stage, at rate one.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Dist {
    Exponential,
    /// Gamma with the given shape; the shape is never learnable.
    Gamma { shape: f64 },
}

/// Where a stage's rate comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum RateSource {
    /// Coordinate `i` of `θ`.
    Param(usize),
    Fixed(f64),
}

/// One stage of the queue (arrivals or service).
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct Stage {
    pub dist: Dist,
    pub rate: RateSource,
}

impl Stage {
    pub fn exp(rate: RateSource) -> Self {
        Stage { dist: Dist::Exponential, rate }
    }

    pub fn gamma(shape: f64, rate: RateSource) -> Self {
        Stage { dist: Dist::Gamma { shape }, rate }
    }

    fn validate(&self, what: &str) -> Result<()> {
        if let Dist::Gamma { shape } = self.dist {
            if !(shape > 0.0 && shape.is_finite()) {
                return Err(Error::config(alloc::format!("{what}: Gamma shape must be > 0, got {shape}")));
            }
        }
        if let RateSource::Fixed(r) = self.rate {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::config(alloc::format!("{what}: fixed rate must be > 0, got {r}")));
            }
        }
        Ok(())
    }

    #[inline]
    fn rate_dual(&self, theta: &[Dual], p: usize) -> Result<Dual> {
        let r = match self.rate {
            RateSource::Param(i) => theta[i],
            RateSource::Fixed(r) => Dual::constant(r, p),
        };
        if !(r.value() > 0.0) {
            return Err(Error::domain(alloc::format!("rates must be positive, got {}", r.value())));
        }
        Ok(r)
    }
}

/// Sampler for rate-one reference draws.
#[derive(Debug, Clone, Copy)]
enum Latent {
    Exp,
    /// `Gamma(½, 1)` as `G²/2`, `G` standard normal.
    HalfChiSquare,
    Gamma(rand_distr::Gamma<f64>),
}

impl Latent {
    fn new(dist: Dist) -> Result<Self> {
        Ok(match dist {
            Dist::Exponential => Latent::Exp,
            Dist::Gamma { shape: 0.5 } => Latent::HalfChiSquare,
            Dist::Gamma { shape } => Latent::Gamma(
                rand_distr::Gamma::new(shape, 1.0).map_err(|_| Error::config("invalid Gamma shape"))?,
            ),
        })
    }

    #[inline]
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Latent::Exp => Exp1.sample(rng),
            Latent::HalfChiSquare => {
                let g: f64 = StandardNormal.sample(rng);
                0.5 * g * g
            }
            Latent::Gamma(d) => d.sample(rng),
        }
    }
}

/// Latent draws for one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentBlock {
    pub service: Vec<f64>,
    pub arrival: Vec<f64>,
}

impl LatentBlock {
    pub fn len(&self) -> usize {
        self.service.len()
    }

    pub fn is_empty(&self) -> bool {
        self.service.is_empty()
    }
}

/// The parametric simulator `G_θ`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct GG1Model {
    pub arrival: Stage,
    pub service: Stage,
    pub burn_in: usize,
    pub horizon: usize,
}

impl GG1Model {
    /// Builds and validates a model. Every `θ` coordinate must drive exactly
    /// one rate.
    pub fn new(arrival: Stage, service: Stage, burn_in: usize, horizon: usize) -> Result<Self> {
        let m = GG1Model { arrival, service, burn_in, horizon };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        self.arrival.validate("arrival")?;
        self.service.validate("service")?;
        if self.horizon == 0 {
            return Err(Error::config("horizon must be at least 1"));
        }
        let mut used = [false; 2];
        let p = self.num_params();
        for stage in [&self.arrival, &self.service] {
            if let RateSource::Param(i) = stage.rate {
                if i >= p || used[i] {
                    return Err(Error::config("each parameter coordinate must drive exactly one rate"));
                }
                used[i] = true;
            }
        }
        Ok(())
    }

    /// Number of `θ` coordinates consumed.
    pub fn num_params(&self) -> usize {
        [self.arrival.rate, self.service.rate]
            .iter()
            .filter(|r| matches!(r, RateSource::Param(_)))
            .count()
    }

    pub fn block_len(&self) -> usize {
        self.burn_in + self.horizon
    }

    /// Output dimension (one average waiting time).
    pub fn output_dim(&self) -> usize {
        1
    }

    /// Fresh reference draws for one replication.
    pub fn draw_latent_block<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<LatentBlock> {
        let (s, a) = (Latent::new(self.service.dist)?, Latent::new(self.arrival.dist)?);
        let len = self.block_len();
        let mut block = LatentBlock { service: Vec::with_capacity(len), arrival: Vec::with_capacity(len) };
        for _ in 0..len {
            block.service.push(s.draw(rng));
            block.arrival.push(a.draw(rng));
        }
        Ok(block)
    }

    /// `n` independent latent blocks.
    pub fn draw_latents<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<LatentBlock>> {
        (0..n).map(|_| self.draw_latent_block(rng)).collect()
    }

    /// Average post-burn-in waiting time, with its gradient in `θ`.
    pub fn pushforward_waiting_time(&self, theta: &[Dual], block: &LatentBlock) -> Result<Dual> {
        let p = self.num_params();
        if theta.len() != p {
            return Err(Error::DimensionMismatch { expected: p, got: theta.len() });
        }
        if block.service.len() != self.block_len() || block.arrival.len() != self.block_len() {
            return Err(Error::DimensionMismatch { expected: self.block_len(), got: block.len() });
        }
        let one = Dual::constant(1.0, p);
        let inv_mu = one / self.service.rate_dual(theta, p)?;
        let inv_lambda = one / self.arrival.rate_dual(theta, p)?;
        Ok(lindley_mean(inv_mu, inv_lambda, block, self.burn_in, self.horizon))
    }

    /// First-order estimate of how far `θ` (in the max norm) can move before
    /// any pre-activation of the recursion on `block` changes sign. Inside
    /// that radius the pushforward is smooth, so finite differences with a
    /// smaller step are exact to second order.
    pub fn kink_margin(&self, theta: &[f64], block: &LatentBlock) -> Result<f64> {
        let p = self.num_params();
        if theta.len() != p {
            return Err(Error::DimensionMismatch { expected: p, got: theta.len() });
        }
        let lifted = crate::dual::lift_param(theta);
        let one = Dual::constant(1.0, p);
        let inv_mu = one / self.service.rate_dual(&lifted, p)?;
        let inv_lambda = one / self.arrival.rate_dual(&lifted, p)?;
        let mut w = Dual::constant(0.0, p);
        let mut margin = f64::INFINITY;
        for (zs, za) in block.service.iter().zip(&block.arrival) {
            let pre = w + inv_mu * *zs - inv_lambda * *za;
            let slope: f64 = pre.grad().iter().map(|g| g.abs()).sum();
            if slope > 0.0 {
                margin = margin.min(pre.value().abs() / slope);
            } else if pre.value() == 0.0 {
                margin = 0.0;
            }
            w = pre.relu();
        }
        Ok(margin)
    }

    /// Pushes every block through `G_θ` at a plain parameter point.
    pub fn push_latents(&self, theta: &[f64], blocks: &[LatentBlock]) -> Result<SimSample> {
        let p = self.num_params();
        if theta.len() != p {
            return Err(Error::DimensionMismatch { expected: p, got: theta.len() });
        }
        let lifted = crate::dual::lift_param(theta);
        let mut out = SimSample::with_capacity(blocks.len(), 1, p);
        for b in blocks {
            out.push(&[self.pushforward_waiting_time(&lifted, b)?]);
        }
        Ok(out)
    }

    /// `n` fresh replications of `G_θ(Z)` with gradients.
    pub fn simulate_model_sample<R: Rng + ?Sized>(&self, theta: &[f64], n: usize, rng: &mut R) -> Result<SimSample> {
        if n < 2 {
            return Err(Error::config("simulated sample size must be at least 2"));
        }
        let blocks = self.draw_latents(n, rng)?;
        self.push_latents(theta, &blocks)
    }
}

/// Lindley recursion on scaled latents. Gradients pass through `relu`, whose
/// derivative at the kink is taken as zero.
fn lindley_mean(inv_mu: Dual, inv_lambda: Dual, block: &LatentBlock, burn_in: usize, horizon: usize) -> Dual {
    let p = inv_mu.dim().max(inv_lambda.dim());
    let mut w = Dual::constant(0.0, p);
    let mut acc = Dual::constant(0.0, p);
    for (j, (zs, za)) in block.service.iter().zip(&block.arrival).enumerate() {
        w = (w + inv_mu * *zs - inv_lambda * *za).relu();
        if j >= burn_in {
            acc = acc + w;
        }
    }
    acc * (1.0 / horizon as f64)
}

/// Optional contamination of target data with additive Gaussian noise.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct Contamination {
    /// Fraction `ε` of observations that receive noise.
    pub fraction: f64,
    pub noise_sd: f64,
}

/// The real system `P⋆`: a queue with every rate fixed.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct TargetSystem {
    pub queue: GG1Model,
    #[cfg_attr(feature = "serde", serde(default))]
    pub contamination: Option<Contamination>,
}

impl TargetSystem {
    pub fn new(queue: GG1Model, contamination: Option<Contamination>) -> Result<Self> {
        let t = TargetSystem { queue, contamination };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        self.queue.validate()?;
        if self.queue.num_params() != 0 {
            return Err(Error::config("target system rates must all be fixed"));
        }
        if let Some(c) = self.contamination {
            if !(0.0..=1.0).contains(&c.fraction) {
                return Err(Error::config("contamination fraction must lie in [0, 1]"));
            }
            if !(c.noise_sd >= 0.0 && c.noise_sd.is_finite()) {
                return Err(Error::config("contamination noise sd must be >= 0"));
            }
        }
        Ok(())
    }

    /// `m` i.i.d. observations (row-major, one column). With contamination, a
    /// uniformly chosen subset of `⌊εm⌋` rows receives `N(0, sd²)` noise; the
    /// clean draws come first, so the clean part does not depend on `ε`.
    pub fn generate_target_data<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Result<Vec<f64>> {
        if m == 0 {
            return Err(Error::config("target sample size must be at least 1"));
        }
        let mut out = Vec::with_capacity(m);
        for _ in 0..m {
            let block = self.queue.draw_latent_block(rng)?;
            out.push(self.queue.pushforward_waiting_time(&[], &block)?.value());
        }
        if let Some(c) = self.contamination {
            let k = libm::floor(c.fraction * m as f64) as usize;
            for idx in rand::seq::index::sample(rng, m, k.min(m)).iter() {
                let z: f64 = StandardNormal.sample(rng);
                out[idx] += c.noise_sd * z;
            }
        }
        Ok(out)
    }
}
