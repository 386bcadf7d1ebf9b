//! Grid of exact, simulated and bounded continuation probabilities.

use std::io::Write;

use distill_core::rng::derive_seed;
use distill_core::theory::{omega2_exact, simulate_bonferroni, theorem1_bounds, TheoryParams};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Grid axes and simulation budget; read from `--grid` JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub n: Vec<u64>,
    pub s_star: Vec<f64>,
    pub n_c: Vec<usize>,
    pub alpha: Vec<f64>,
    pub trials: u64,
    pub seed: u64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            n: vec![100, 1000, 10_000],
            s_star: vec![0.05, 0.1, 0.5],
            n_c: vec![2, 10, 50],
            alpha: vec![0.05, 0.01],
            trials: 100_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub n: u64,
    pub s_star: f64,
    pub n_c: usize,
    pub alpha: f64,
    /// Closed form; only defined for two candidates.
    pub omega2_exact: Option<f64>,
    pub omega2_sim: f64,
    pub omega2_bound: f64,
    pub n_prime_bound: f64,
    pub in_regime: bool,
}

/// Rows in `n`, `s_star`, `n_c`, `alpha` nesting order. Point `k` simulates
/// with seed `derive_seed(seed, k)`.
pub fn theory_grid(spec: &GridSpec) -> Result<Vec<GridRow>> {
    if spec.n.is_empty() || spec.s_star.is_empty() || spec.n_c.is_empty() || spec.alpha.is_empty() {
        return Err(Error::Config("every grid axis needs at least one value".into()));
    }
    let mut rows = Vec::new();
    for &n in &spec.n {
        for &s_star in &spec.s_star {
            for &n_c in &spec.n_c {
                for &alpha in &spec.alpha {
                    let p = TheoryParams { mu: s_star, sigma: 1.0, n, alpha, n_c, s_star };
                    let seed = derive_seed(spec.seed, rows.len() as u64);
                    let sim = simulate_bonferroni(&p, spec.trials, seed)?;
                    let bound = theorem1_bounds(&p)?;
                    rows.push(GridRow {
                        n,
                        s_star,
                        n_c,
                        alpha,
                        omega2_exact: if n_c == 2 { Some(omega2_exact(&p)?) } else { None },
                        omega2_sim: sim.omega2,
                        omega2_bound: bound.omega2_upper,
                        n_prime_bound: bound.n_prime_upper,
                        in_regime: bound.in_regime,
                    });
                }
            }
        }
    }
    Ok(rows)
}

/// `n,S*,N_C,alpha,omega2_exact,omega2_sim,omega2_bound,n_prime_bound,in_regime`;
/// `omega2_exact` is empty when `N_C > 2`.
pub fn write_grid_csv<W: Write>(rows: &[GridRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "n",
        "S*",
        "N_C",
        "alpha",
        "omega2_exact",
        "omega2_sim",
        "omega2_bound",
        "n_prime_bound",
        "in_regime",
    ])?;
    for r in rows {
        out.write_record([
            r.n.to_string(),
            r.s_star.to_string(),
            r.n_c.to_string(),
            r.alpha.to_string(),
            r.omega2_exact.map_or_else(String::new, |v| v.to_string()),
            r.omega2_sim.to_string(),
            r.omega2_bound.to_string(),
            r.n_prime_bound.to_string(),
            r.in_regime.to_string(),
        ])?;
    }
    out.flush().map_err(|e| Error::Csv(e.into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_grid() {
        let spec = GridSpec { n: vec![100], s_star: vec![0.1], n_c: vec![2, 10], alpha: vec![0.05], trials: 20_000, seed: 3 };
        let rows = theory_grid(&spec).unwrap();
        assert_eq!(rows.len(), 2);
        let exact = rows[0].omega2_exact.unwrap();
        assert!((exact - 0.9071).abs() < 1e-3);
        assert!((rows[0].omega2_sim - exact).abs() < 0.02);
        assert!(rows[1].omega2_exact.is_none());
        assert!(!rows[0].in_regime);

        let mut buf = Vec::new();
        write_grid_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "n,S*,N_C,alpha,omega2_exact,omega2_sim,omega2_bound,n_prime_bound,in_regime");
        assert!(lines.nth(1).unwrap().starts_with("100,0.1,10,0.05,,"));
    }

    #[test]
    fn empty_axis() {
        let spec = GridSpec { n_c: vec![], ..GridSpec::default() };
        assert!(theory_grid(&spec).is_err());
    }

    #[test]
    fn deterministic() {
        let spec = GridSpec { n: vec![1000], s_star: vec![0.05], n_c: vec![10], alpha: vec![0.01], trials: 5000, seed: 9 };
        assert_eq!(theory_grid(&spec).unwrap(), theory_grid(&spec).unwrap());
    }
}
