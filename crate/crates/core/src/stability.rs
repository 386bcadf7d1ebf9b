//! Loss gaps, p-values, the Bonferroni test, sample-size search and the
//! round loop that ties them together.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::data::Dataset;
use crate::sampler::CorpusFactory;
use crate::stats::{upper_tail, z_quantile, RunningStats};
use crate::student::{partition, select_representatives, Candidate, CandidateFamily, EquivalenceClass, RoundContext};
use crate::{math, Error, Result, PROB_EPS};

/// Cross-entropy (negative log-likelihood) of label `y` under `P(y = 1) = p`.
pub fn cross_entropy_loss(y: u8, p: f64) -> Result<f64> {
    if y > 1 {
        return Err(Error::Domain(format!("label must be 0 or 1, got {y}")));
    }
    // A hair of slack so values produced by clamp_prob always pass.
    let slack = 1e-15;
    if !(p >= PROB_EPS - slack && p <= 1.0 - PROB_EPS + slack) {
        return Err(Error::Domain(format!("probability {p} outside [{PROB_EPS}, 1 - {PROB_EPS}]")));
    }
    Ok(nll(y, p))
}

/// Unchecked cross-entropy used on hot paths; NaN in, NaN out.
#[inline]
pub fn nll(y: u8, p: f64) -> f64 {
    if y == 1 {
        -math::ln(p)
    } else {
        -math::ln(1.0 - p)
    }
}

/// One-sided p-value `1 - Phi(sqrt(n) d / sqrt(2 sigma^2))`.
///
/// `sigma_sq == 0` means the gap is deterministic: `p = 0`.
pub fn p_value(n: f64, d: f64, sigma_sq: f64) -> f64 {
    if sigma_sq <= 0.0 {
        return 0.0;
    }
    upper_tail(math::sqrt(n) * d / math::sqrt(2.0 * sigma_sq))
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GapRow {
    pub competitor_key: String,
    pub d: f64,
    pub sigma_hat: f64,
    pub p: f64,
    /// Identical per-row losses: treated as the same decision, `p = 0`.
    pub merged: bool,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossGapTable {
    pub best_class_key: String,
    /// Index of the best class in the slice passed to [`gap_table`].
    pub best_index: usize,
    pub best_loss: f64,
    /// Size of the corpus the gaps were measured on.
    pub n: usize,
    pub rows: Vec<GapRow>,
}

impl LossGapTable {
    pub fn sum_p(&self) -> f64 {
        self.rows.iter().map(|r| r.p).sum()
    }

    /// `sum p` with gaps and variances frozen but corpus size `n`.
    pub fn sum_p_at(&self, n: f64) -> f64 {
        self.rows
            .iter()
            .filter(|r| !r.merged)
            .map(|r| p_value(n, r.d, r.sigma_hat * r.sigma_hat))
            .sum()
    }
}

/// Gap table of every class representative against the best one on `corpus`.
///
/// Representatives are re-evaluated row by row; the best class has the lowest
/// mean loss, ties resolved by key order (classes arrive key-sorted).
pub fn gap_table(classes: &[EquivalenceClass], corpus: &Dataset) -> Result<LossGapTable> {
    if classes.is_empty() {
        return Err(Error::Evaluation("no equivalence classes to compare".into()));
    }
    let n = corpus.n_rows();
    if n == 0 {
        return Err(Error::Evaluation("evaluation corpus is empty".into()));
    }
    let losses: Vec<Vec<f64>> = crate::par_map(classes.len(), |i| {
        let model = &classes[i].representative().model;
        corpus
            .rows()
            .zip(corpus.labels())
            .map(|(x, &y)| nll(y, model.predict_proba(x)))
            .collect()
    });
    let means: Vec<f64> = losses.iter().map(|l| l.iter().sum::<f64>() / n as f64).collect();
    let mut best = None::<usize>;
    for (i, &m) in means.iter().enumerate() {
        if !m.is_finite() {
            continue;
        }
        if best.map_or(true, |b| m < means[b]) {
            best = Some(i);
        }
    }
    let best = best.ok_or_else(|| Error::Evaluation("every representative has a non-finite loss".into()))?;
    let mut rows = Vec::with_capacity(classes.len() - 1);
    for (j, class) in classes.iter().enumerate() {
        if j == best {
            continue;
        }
        let mut acc = RunningStats::new();
        for (a, b) in losses[j].iter().zip(&losses[best]) {
            acc.push(a - b);
        }
        // d from the class means so d >= 0 holds exactly
        let d = means[j] - means[best];
        let (d, sigma_sq) = if d.is_finite() { (d, acc.variance().unwrap_or(0.0)) } else { (f64::INFINITY, 0.0) };
        let merged = sigma_sq == 0.0 && losses[j] == losses[best];
        let p = if merged { 0.0 } else { p_value(n as f64, d, sigma_sq) };
        rows.push(GapRow {
            competitor_key: String::from(class.key.as_str()),
            d,
            sigma_hat: math::sqrt(sigma_sq),
            p,
            merged,
        });
    }
    Ok(LossGapTable {
        best_class_key: String::from(classes[best].key.as_str()),
        best_index: best,
        best_loss: means[best],
        n,
        rows,
    })
}

/// Bonferroni: pass iff the competitor p-values sum to at most `alpha`.
pub fn bonferroni_pass(table: &LossGapTable, alpha: f64) -> bool {
    table.sum_p() <= alpha
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RequiredN {
    Finite(u64),
    /// Zero gap: no finite corpus separates the pair.
    Unbounded,
}

/// Smallest integer `n > 2 Z_alpha^2 sigma^2 / d^2`, bumped further if
/// rounding leaves `p_value(n) > alpha`, so the returned size passes exactly.
pub fn required_n(d: f64, sigma_sq: f64, alpha: f64) -> Result<RequiredN> {
    let z = z_quantile(alpha)?;
    if !(d >= 0.0) || !d.is_finite() {
        return Err(Error::Domain(format!("gap must be finite and nonnegative, got {d}")));
    }
    if !(sigma_sq > 0.0) || !sigma_sq.is_finite() {
        return Err(Error::Domain(format!("variance must be finite and positive, got {sigma_sq}")));
    }
    if d == 0.0 {
        return Ok(RequiredN::Unbounded);
    }
    let bound = 2.0 * z * z * sigma_sq / (d * d);
    if !(bound < 9.0e15) {
        return Ok(RequiredN::Unbounded);
    }
    let mut n = math::floor(bound) as u64 + 1;
    while p_value(n as f64, d, sigma_sq) > alpha {
        n += 1;
    }
    Ok(RequiredN::Finite(n))
}

/// `ceil(x)` that ignores floating-point dust just above an integer.
fn ceil_tolerant(x: f64) -> u64 {
    let r = math::floor(x + 0.5);
    if math::abs(x - r) <= 1e-9 * x.max(1.0) {
        r as u64
    } else {
        math::ceil(x) as u64
    }
}

/// Linear search `n' = (1 + tL) n`, `t = 1, 2, ...`, for the first size at
/// which the frozen table passes. Capped at `n_max`.
pub fn linear_search_n(table: &LossGapTable, state: &StabilityState) -> u64 {
    let n = state.n as f64;
    let mut t = 1u64;
    loop {
        let candidate = ceil_tolerant((1.0 + t as f64 * state.l_rate) * n);
        if candidate >= state.n_max {
            return state.n_max;
        }
        if table.sum_p_at(candidate as f64) <= state.alpha {
            return candidate;
        }
        t += 1;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StabilityConfig {
    pub alpha: f64,
    /// Growth rate `L` of the linear search.
    pub l_rate: f64,
    pub n_init: u64,
    pub n_max: u64,
    /// `false` runs a single round at `n_init` (the unstabilized baseline).
    pub stabilize: bool,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self { alpha: 0.05, l_rate: 0.1, n_init: 1000, n_max: 100_000, stabilize: true }
    }
}

impl StabilityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.l_rate > 0.0 && self.l_rate.is_finite()) {
            return Err(Error::Config(format!("L must be positive, got {}", self.l_rate)));
        }
        if self.n_init < 2 {
            return Err(Error::Config(format!("n_init must be at least 2, got {}", self.n_init)));
        }
        if self.n_max < self.n_init {
            return Err(Error::Config(format!("n_max {} is below n_init {}", self.n_max, self.n_init)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum StopReason {
    TestPassed,
    /// The test failed at `n = n_max`.
    NMaxReached,
    /// The evaluation corpus carried a single teacher label, so the gap test
    /// has nothing to discriminate on.
    SingleClass,
    /// Baseline mode: one round at `n_init`, no test-driven growth.
    Unstabilized,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityState {
    pub n: u64,
    pub round: u32,
    pub alpha: f64,
    pub l_rate: f64,
    pub n_init: u64,
    pub n_max: u64,
    pub c: usize,
    pub stop_reason: Option<StopReason>,
    /// Size proposed by the last failed test.
    pub suggested_n: Option<u64>,
}

impl StabilityState {
    pub fn new(cfg: &StabilityConfig, c: usize) -> Self {
        Self {
            n: cfg.n_init,
            round: 0,
            alpha: cfg.alpha,
            l_rate: cfg.l_rate,
            n_init: cfg.n_init,
            n_max: cfg.n_max,
            c,
            stop_reason: None,
            suggested_n: None,
        }
    }
}

/// One audit line per round.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RoundRecord {
    pub round: u32,
    pub n: u64,
    #[cfg_attr(feature = "serde", serde(rename = "M"))]
    pub m: usize,
    pub sum_p: f64,
    pub best_key: String,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub winner: Candidate,
    pub state: StabilityState,
    pub audit: Vec<RoundRecord>,
    pub table: LossGapTable,
}

/// Index of the evaluation corpus within a round's block of 2^32 indices.
const EVAL_SLOT: u64 = 0xFFFF_FFFF;

/// Corpus index block of round `round`: candidates take `base + i`, the
/// evaluation corpus takes `base + EVAL_SLOT`.
pub fn round_base_index(round: u32) -> u64 {
    (round as u64) << 32
}

/// The distillation loop: generate, partition, evaluate, test, grow.
pub fn run_algorithm1(
    corpora: &dyn CorpusFactory,
    family: &dyn CandidateFamily,
    cfg: &StabilityConfig,
    seed: u64,
) -> Result<Outcome> {
    cfg.validate()?;
    let mut state = StabilityState::new(cfg, family.complexity_cap());
    let mut audit = Vec::new();
    loop {
        let base = round_base_index(state.round);
        let ctx = RoundContext { corpora, base_index: base, round: state.round, seed };
        let n = usize::try_from(state.n).map_err(|_| Error::Config("corpus size overflows usize".into()))?;
        let candidates = family.generate(&ctx, n)?;
        if candidates.is_empty() {
            return Err(Error::Evaluation(format!("round {} produced no candidates", state.round)));
        }
        let eval = corpora.corpus(base + EVAL_SLOT, n)?;
        let classes = select_representatives(partition(candidates), &eval, nll)?;
        let table = gap_table(&classes, &eval)?;
        let passed = bonferroni_pass(&table, cfg.alpha);
        audit.push(RoundRecord {
            round: state.round,
            n: state.n,
            m: classes.len(),
            sum_p: table.sum_p(),
            best_key: table.best_class_key.clone(),
        });

        let stop = if !cfg.stabilize {
            Some(StopReason::Unstabilized)
        } else if passed {
            Some(StopReason::TestPassed)
        } else if !eval.has_both_labels() {
            Some(StopReason::SingleClass)
        } else if state.n >= state.n_max {
            Some(StopReason::NMaxReached)
        } else {
            None
        };
        if let Some(reason) = stop {
            state.stop_reason = Some(reason);
            let winner = classes[table.best_index].representative().clone();
            return Ok(Outcome { winner, state, audit, table });
        }
        let next = linear_search_n(&table, &state);
        state.suggested_n = Some(next);
        state.n = next.max(state.n);
        state.round += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FeatureSchema;
    use crate::student::{Family, StructureKey, StudentModel};
    use alloc::sync::Arc;
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn loss_values() {
        assert!((cross_entropy_loss(1, 0.5).unwrap() - core::f64::consts::LN_2).abs() < 1e-12);
        assert!((cross_entropy_loss(0, 0.9).unwrap() - 2.302_585_092_994_045_5).abs() < 1e-9);
        assert!(cross_entropy_loss(1, 1.0 - PROB_EPS).unwrap() < 1.1e-6);
        assert!(cross_entropy_loss(1, 0.0).is_err());
        assert!(cross_entropy_loss(1, 1.0).is_err());
        assert!(cross_entropy_loss(2, 0.5).is_err());
    }

    #[test]
    fn p_value_reference() {
        // sqrt(100) * 0.2 / sqrt(4) = 1
        assert!((p_value(100.0, 0.2, 2.0) - 0.158_655_253_931_457_05).abs() < 1e-12);
    }

    #[test]
    fn bonferroni_cases() {
        let row = |p| GapRow { competitor_key: "x".into(), d: 0.0, sigma_hat: 1.0, p, merged: false };
        let mut t = LossGapTable { best_class_key: "b".into(), best_index: 0, best_loss: 0.0, n: 10, rows: vec![] };
        assert!(bonferroni_pass(&t, 0.05));
        t.rows = vec![row(0.0), row(0.0)];
        assert!(bonferroni_pass(&t, 0.05));
        t.rows = vec![row(0.03), row(0.03)];
        assert!(!bonferroni_pass(&t, 0.05));
    }

    #[test]
    fn required_n_reference() {
        assert_eq!(required_n(0.1, 1.0, 0.05).unwrap(), RequiredN::Finite(542));
        assert_eq!(required_n(0.0, 1.0, 0.05).unwrap(), RequiredN::Unbounded);
        assert!(required_n(0.1, 0.0, 0.05).is_err());
        let RequiredN::Finite(a) = required_n(0.05, 1.0, 0.05).unwrap() else { panic!() };
        let RequiredN::Finite(b) = required_n(0.1, 1.0, 0.05).unwrap() else { panic!() };
        assert!(a.abs_diff(4 * b) <= 4);
        let RequiredN::Finite(c) = required_n(0.1, 1.0, 0.01).unwrap() else { panic!() };
        assert!(c > b);
    }

    fn single_row_table(d: f64, sigma_sq: f64) -> LossGapTable {
        LossGapTable {
            best_class_key: "b".into(),
            best_index: 0,
            best_loss: 0.0,
            n: 1000,
            rows: vec![GapRow { competitor_key: "c".into(), d, sigma_hat: sigma_sq.sqrt(), p: 0.5, merged: false }],
        }
    }

    fn state(n: u64, n_max: u64) -> StabilityState {
        StabilityState::new(&StabilityConfig { n_init: n, n_max, ..Default::default() }, 3)
    }

    #[test]
    fn linear_search_hits_one_and_a_half() {
        // requirement 1450 at n = 1000: t = 5 gives the first passing size 1500
        let z = z_quantile(0.05).unwrap();
        let sigma_sq = 1.0;
        let d = (2.0 * z * z * sigma_sq / 1450.0).sqrt();
        assert_eq!(linear_search_n(&single_row_table(d, sigma_sq), &state(1000, 100_000)), 1500);
    }

    #[test]
    fn linear_search_caps_at_n_max() {
        let t = single_row_table(1e-9, 1.0);
        assert_eq!(linear_search_n(&t, &state(1000, 20_000)), 20_000);
    }

    #[test]
    fn tolerant_ceil() {
        assert_eq!(ceil_tolerant((1.0 + 3.0 * 0.1) * 1000.0), 1300);
        assert_eq!(ceil_tolerant(1300.2), 1301);
    }

    #[derive(Debug)]
    struct Const(f64);
    impl StudentModel for Const {
        fn predict_proba(&self, _x: &[f64]) -> f64 {
            self.0
        }
    }

    #[derive(Debug)]
    struct Step(f64);
    impl StudentModel for Step {
        fn predict_proba(&self, x: &[f64]) -> f64 {
            if x[0] > self.0 {
                0.9
            } else {
                0.1
            }
        }
    }

    fn classes(models: Vec<(&str, Arc<dyn StudentModel>)>, eval: &Dataset) -> Vec<EquivalenceClass> {
        let c = models
            .into_iter()
            .map(|(k, m)| Candidate::new(m, StructureKey::new(k), 1, Family::Other))
            .collect();
        select_representatives(partition(c), eval, nll).unwrap()
    }

    fn eval() -> Dataset {
        let x: Vec<f64> = (0..100).map(|i| i as f64 / 100.0).collect();
        let y = x.iter().map(|&v| u8::from(v > 0.5)).collect();
        Dataset::new(x, y, FeatureSchema::continuous(&["x"])).unwrap()
    }

    #[test]
    fn gap_table_degenerate_rows() {
        let e = eval();
        let cs = classes(vec![("A", Arc::new(Step(0.5))), ("B", Arc::new(Step(0.5))), ("C", Arc::new(Const(0.5)))], &e);
        let t = gap_table(&cs, &e).unwrap();
        assert_eq!(t.best_class_key, "A");
        assert_eq!(t.rows.len(), 2);
        assert!(t.rows[0].merged && t.rows[0].p == 0.0 && t.rows[0].d == 0.0);
        assert!(!t.rows[1].merged && t.rows[1].d > 0.0);
        let single = classes(vec![("A", Arc::new(Step(0.5)))], &e);
        let t = gap_table(&single, &e).unwrap();
        assert!(t.rows.is_empty());
        assert!(bonferroni_pass(&t, 0.05));
    }

    proptest! {
        #[test]
        fn required_n_passes_exactly(d in 1e-3f64..2.0, s in 1e-3f64..4.0, alpha in 1e-4f64..0.4) {
            let RequiredN::Finite(n) = required_n(d, s, alpha).unwrap() else { unreachable!() };
            prop_assert!(p_value(n as f64, d, s) <= alpha);
            prop_assert!(n as f64 > 2.0 * z_quantile(alpha).unwrap().powi(2) * s / (d * d));
        }

        #[test]
        fn frozen_sum_p_nonincreasing_in_n(
            rows in proptest::collection::vec((0.0f64..0.5, 0.01f64..2.0), 1..6),
            n in 10u64..5000,
        ) {
            let table = LossGapTable {
                best_class_key: "b".into(), best_index: 0, best_loss: 0.0, n: n as usize,
                rows: rows.iter().map(|&(d, s)| GapRow {
                    competitor_key: "c".into(), d, sigma_hat: s, p: 0.0, merged: false,
                }).collect(),
            };
            let mut last = f64::INFINITY;
            for t in 1..30 {
                let s = table.sum_p_at(n as f64 * (1.0 + 0.1 * t as f64));
                prop_assert!(s <= last);
                last = s;
            }
        }

        #[test]
        fn gaps_are_nonnegative(cuts in proptest::collection::vec(0.0f64..1.0, 1..6)) {
            let e = eval();
            let models: Vec<(alloc::string::String, Arc<dyn StudentModel>)> = cuts
                .iter()
                .enumerate()
                .map(|(i, &c)| (format!("k{i}"), Arc::new(Step(c)) as Arc<dyn StudentModel>))
                .collect();
            let cs = classes(models.iter().map(|(k, m)| (k.as_str(), m.clone())).collect(), &e);
            let t = gap_table(&cs, &e).unwrap();
            for r in &t.rows {
                prop_assert!(r.d >= 0.0);
                if r.sigma_hat > 0.0 {
                    prop_assert!(r.p <= 0.5);
                }
            }
        }
    }
}
