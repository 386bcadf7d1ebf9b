//! The stopping rule viewed as a Markov process.
//!
//! With the variance treated as known, the observed standardized gap of two
//! candidates is `Z1 = sqrt(n) d / sigma ~ N(sqrt(n) S, 1)` where
//! `S = mu / sigma`. The test keeps going (transition probability `omega2`)
//! while `|Z1| < sqrt(2) Z_alpha`, and then proposes
//! `n' = 2 Z_alpha^2 n / Z1^2`.

use alloc::format;
use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal};

use crate::rng::stream;
use crate::stats::{phi, upper_tail, z_quantile};
use crate::{math, Error, Result};

const SQRT_2: f64 = core::f64::consts::SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TheoryParams {
    /// True mean loss gap of the pair.
    pub mu: f64,
    /// True standard deviation of the per-row loss difference.
    pub sigma: f64,
    pub n: u64,
    pub alpha: f64,
    /// Number of candidates `N(C)`.
    pub n_c: usize,
    /// Smallest standardized gap `S*(C)`.
    pub s_star: f64,
}

impl TheoryParams {
    /// Two candidates separated by standardized gap `s` (`sigma = 1`).
    pub fn pair(s: f64, n: u64, alpha: f64) -> Self {
        Self { mu: s, sigma: 1.0, n, alpha, n_c: 2, s_star: s }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Domain(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !self.mu.is_finite() {
            return Err(Error::Domain(format!("mu must be finite, got {}", self.mu)));
        }
        if self.n == 0 {
            return Err(Error::Domain("n must be positive".into()));
        }
        if self.n_c < 2 {
            return Err(Error::Domain(format!("need at least 2 candidates, got {}", self.n_c)));
        }
        if !(self.s_star >= 0.0 && self.s_star.is_finite()) {
            return Err(Error::Domain(format!("S* must be finite and nonnegative, got {}", self.s_star)));
        }
        z_quantile(self.alpha).map(|_| ())
    }

    /// Standardized gap `S = mu / sigma`.
    pub fn s(&self) -> f64 {
        self.mu / self.sigma
    }

    fn sqrt_n(&self) -> f64 {
        math::sqrt(self.n as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionEstimate {
    pub omega1: f64,
    pub omega2: f64,
    /// Proposed sizes `n'` from the trials that did not stop.
    pub n_prime_samples: Vec<f64>,
    pub trials: u64,
}

/// Exact continuation probability of the two-candidate process.
pub fn omega2_exact(p: &TheoryParams) -> Result<f64> {
    p.validate()?;
    let z = z_quantile(p.alpha)?;
    let shift = p.sqrt_n() * p.s();
    Ok(phi(SQRT_2 * z - shift) - phi(-SQRT_2 * z - shift))
}

/// `P(n' >= 2 Z_alpha^2 n / delta^2) = P(|Z1| <= delta)`.
pub fn n_prime_tail(p: &TheoryParams, delta: f64) -> Result<f64> {
    p.validate()?;
    if !(delta > 0.0) {
        return Err(Error::Domain(format!("delta must be positive, got {delta}")));
    }
    let shift = p.sqrt_n() * p.s();
    Ok(phi(delta - shift) - phi(-delta - shift))
}

const BLOCK: u64 = 1 << 14;

fn blocks(trials: u64) -> usize {
    trials.div_ceil(BLOCK) as usize
}

fn block_len(trials: u64, b: usize) -> u64 {
    BLOCK.min(trials - b as u64 * BLOCK)
}

/// Monte-Carlo run of the two-candidate process: draw `d ~ N(mu, sigma^2/n)`,
/// stop when `|d| > Z_alpha sqrt(2 sigma^2 / n)`, otherwise record `n'`.
pub fn simulate_two_candidate(p: &TheoryParams, trials: u64, seed: u64) -> Result<TransitionEstimate> {
    p.validate()?;
    if trials == 0 {
        return Err(Error::Domain("trials must be positive".into()));
    }
    let z = z_quantile(p.alpha)?;
    let sqrt_n = p.sqrt_n();
    let cut = z * math::sqrt(2.0 * p.sigma * p.sigma / p.n as f64);
    let scale = 2.0 * z * z * p.n as f64;
    let parts = crate::par_map(blocks(trials), |b| {
        let mut rng = stream(seed, b as u64);
        let mut out = Vec::new();
        for _ in 0..block_len(trials, b) {
            let e: f64 = StandardNormal.sample(&mut rng);
            let d = p.mu + p.sigma / sqrt_n * e;
            if math::abs(d) <= cut {
                let z1 = sqrt_n * d / p.sigma;
                out.push(scale / (z1 * z1));
            }
        }
        out
    });
    let n_prime_samples: Vec<f64> = parts.into_iter().flatten().collect();
    let omega2 = n_prime_samples.len() as f64 / trials as f64;
    Ok(TransitionEstimate { omega1: 1.0 - omega2, omega2, n_prime_samples, trials })
}

/// Monte-Carlo continuation probability with `n_c - 1` independent
/// competitors, each at standardized gap `S*`, under the Bonferroni rule
/// (two-sided per-competitor p-values summed against `alpha`).
pub fn simulate_bonferroni(p: &TheoryParams, trials: u64, seed: u64) -> Result<TransitionEstimate> {
    p.validate()?;
    if trials == 0 {
        return Err(Error::Domain("trials must be positive".into()));
    }
    let shift = p.sqrt_n() * p.s_star;
    let k = p.n_c - 1;
    let counts = crate::par_map(blocks(trials), |b| {
        let mut rng = stream(seed, b as u64);
        let mut cont = 0u64;
        for _ in 0..block_len(trials, b) {
            let mut sum_p = 0.0;
            for _ in 0..k {
                let e: f64 = StandardNormal.sample(&mut rng);
                sum_p += upper_tail(math::abs(shift + e) / SQRT_2);
            }
            if sum_p > p.alpha {
                cont += 1;
            }
        }
        cont
    });
    let omega2 = counts.iter().sum::<u64>() as f64 / trials as f64;
    Ok(TransitionEstimate { omega1: 1.0 - omega2, omega2, n_prime_samples: Vec::new(), trials })
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Theorem1Bounds {
    pub omega1_lower: f64,
    pub omega2_upper: f64,
    pub n_prime_upper: f64,
    /// `sqrt(n) S* > 2 sqrt(ln(N / (2 alpha)))`. Outside this regime the
    /// bounds are still reported but may be vacuous.
    pub in_regime: bool,
}

/// Large-sample bounds on the stopping probability and the proposed size.
pub fn theorem1_bounds(p: &TheoryParams) -> Result<Theorem1Bounds> {
    p.validate()?;
    let big_n = p.n_c as f64;
    let lg = math::ln(big_n / (2.0 * p.alpha));
    if !(lg > 0.0) {
        return Err(Error::Domain(format!(
            "ln(N / 2 alpha) must be positive, got N = {}, alpha = {}",
            p.n_c, p.alpha
        )));
    }
    let margin = p.sqrt_n() * p.s_star - 2.0 * math::sqrt(lg);
    let omega2_upper =
        big_n * math::sqrt(8.0 / core::f64::consts::PI * lg) * math::exp(-0.5 * margin * margin);
    let n = p.n as f64;
    Ok(Theorem1Bounds {
        omega1_lower: 1.0 - omega2_upper,
        omega2_upper,
        n_prime_upper: 4.0 * n * math::ln(n) * big_n * big_n * lg,
        in_regime: margin > 0.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sandwich {
    pub lower: f64,
    pub z: f64,
    pub upper: f64,
}

/// `sqrt(2 ln(1/10a) - ln ln(1/10a)) < Z_a < sqrt(2 ln(1/2a))` for small `a`.
pub fn lemma1_sandwich(alpha: f64) -> Result<Sandwich> {
    let z = z_quantile(alpha)?;
    if !(10.0 * alpha < 1.0) {
        return Err(Error::Domain(format!("alpha = {alpha} is outside the small-alpha regime (need 10 alpha < 1)")));
    }
    let l = math::ln(1.0 / (10.0 * alpha));
    let lower = math::sqrt(2.0 * l - math::ln(l));
    let upper = math::sqrt(2.0 * math::ln(1.0 / (2.0 * alpha)));
    if !(lower < z && z < upper) {
        return Err(Error::Domain(format!(
            "alpha = {alpha} too large for the sandwich: {lower} < {z} < {upper} fails"
        )));
    }
    Ok(Sandwich { lower, z, upper })
}
