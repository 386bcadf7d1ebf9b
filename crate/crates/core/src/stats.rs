//! Normal CDF and quantile, streaming moments, entropy.

use alloc::format;

use crate::math;
use crate::{Error, Result};

const SQRT_2: f64 = core::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
#[inline]
pub fn pdf(x: f64) -> f64 {
    INV_SQRT_2PI * math::exp(-0.5 * x * x)
}

/// Standard normal CDF `P(Z < x)`.
#[inline]
pub fn phi(x: f64) -> f64 {
    0.5 * math::erfc(-x / SQRT_2)
}

/// Upper tail `P(Z > x) = 1 - phi(x)`, accurate far into the right tail.
#[inline]
pub fn upper_tail(x: f64) -> f64 {
    0.5 * math::erfc(x / SQRT_2)
}

/// `Z_alpha`: the `(1 - alpha)`-quantile of the standard normal.
///
/// A rational starting point is polished with Newton steps on the tail
/// function, so `phi(z_quantile(a))` matches `1 - a` to working precision.
pub fn z_quantile(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if alpha > 0.5 {
        return Ok(-upper_quantile(1.0 - alpha));
    }
    Ok(upper_quantile(alpha))
}

// Solves upper_tail(z) = a for a in (0, 0.5].
fn upper_quantile(a: f64) -> f64 {
    // Abramowitz & Stegun 26.2.23, |error| < 4.5e-4.
    let t = math::sqrt(-2.0 * math::ln(a));
    let mut z = t
        - (2.515_517 + 0.802_853 * t + 0.010_328 * t * t)
            / (1.0 + 1.432_788 * t + 0.189_269 * t * t + 0.001_308 * t * t * t);
    for _ in 0..60 {
        let density = pdf(z);
        if density == 0.0 {
            break;
        }
        // Halley step on f(z) = Q(z) - a, f' = -pdf, f'' = z * pdf.
        let f = upper_tail(z) - a;
        let newton = f / density;
        let step = newton / (1.0 + 0.5 * z * newton);
        z += step;
        if math::abs(step) <= 1e-15 * (1.0 + math::abs(z)) {
            break;
        }
    }
    z
}

/// One-pass (Welford) mean and variance accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunningStats {
    count: u64,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased (n - 1) variance; `None` with fewer than two samples.
    pub fn variance(&self) -> Option<f64> {
        if self.count < 2 {
            None
        } else {
            Some((self.m2 / (self.count - 1) as f64).max(0.0))
        }
    }
}

/// Sample mean and unbiased variance.
pub fn mean_var(samples: &[f64]) -> Result<(f64, f64)> {
    let mut acc = RunningStats::new();
    for &x in samples {
        acc.push(x);
    }
    let var = acc.variance().ok_or_else(|| {
        Error::InsufficientData(format!(
            "variance needs at least 2 samples, got {}",
            samples.len()
        ))
    })?;
    Ok((acc.mean(), var))
}

/// Shannon entropy in bits, with `0 log 0 = 0`.
pub fn entropy(proportions: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for &p in proportions {
        if !(p >= 0.0) {
            return Err(Error::Domain(format!("proportion must be nonnegative, got {p}")));
        }
        total += p;
    }
    if math::abs(total - 1.0) > 1e-9 {
        return Err(Error::Domain(format!("proportions sum to {total}, expected 1")));
    }
    let h: f64 = proportions
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * math::log2(p))
        .sum();
    Ok(h.max(0.0))
}
