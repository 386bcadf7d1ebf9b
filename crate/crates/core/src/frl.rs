//! Falling rule lists sampled from their posterior.
//!
//! A list is an ordered sequence of IF clauses (conjunctions of positive
//! binary literals) with nonincreasing risk scores; a row takes the risk of
//! the first clause it satisfies, or the default risk when none match.
//! Lists are explored with a Metropolis-Hastings chain (insert, delete, swap
//! adjacent) mixed with a Gibbs move that resamples one clause.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use rand::Rng;

use crate::data::Dataset;
use crate::rng::{derive_seed, stream, StreamRng};
use crate::sampler::CorpusFactory;
use crate::student::{Candidate, CandidateFamily, Family, RoundContext, StructureKey, StudentModel};
use crate::{clamp_prob, math, Error, Result};

/// A conjunction of positive literals `x[f] = 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Antecedent {
    /// Feature indices, ascending.
    pub features: Vec<usize>,
    /// Rows of the mining corpus satisfying the clause.
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AntecedentPool {
    antecedents: Vec<Antecedent>,
    names: Arc<[String]>,
}

impl AntecedentPool {
    pub fn len(&self) -> usize {
        self.antecedents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.antecedents.is_empty()
    }

    pub fn antecedents(&self) -> &[Antecedent] {
        &self.antecedents
    }

    pub fn feature_names(&self) -> &[String] {
        &self.names
    }

    /// `[IllDefinedMargin, Age≥60]`-style label of antecedent `i`.
    pub fn label(&self, i: usize) -> String {
        clause_label(&self.antecedents[i].features, &self.names)
    }

    /// Pool restricted to the given antecedent indices (in that order).
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let antecedents = indices
            .iter()
            .map(|&i| {
                self.antecedents
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::Config(format!("antecedent {i} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        if antecedents.is_empty() {
            return Err(Error::Mining("empty antecedent subset".into()));
        }
        Ok(Self { antecedents, names: self.names.clone() })
    }
}

fn clause_label(features: &[usize], names: &[String]) -> String {
    let mut s = String::from("[");
    for (i, &f) in features.iter().enumerate() {
        if i > 0 {
            s.push_str(", ");
        }
        s.push_str(&names[f]);
    }
    s.push(']');
    s
}

/// Every conjunction of at most `max_literals` positive literals whose
/// support fraction is at least `min_support`, ordered by length and then by
/// feature indices.
pub fn mine_antecedents(corpus: &Dataset, min_support: f64, max_literals: usize) -> Result<AntecedentPool> {
    if !corpus.schema().all_binary() {
        return Err(Error::Schema("rule mining needs an all-binary feature schema".into()));
    }
    if !(0.0..=1.0).contains(&min_support) {
        return Err(Error::Config(format!("min_support must lie in [0, 1], got {min_support}")));
    }
    if max_literals == 0 {
        return Err(Error::Config("max_literals must be positive".into()));
    }
    let n = corpus.n_rows();
    if n == 0 {
        return Err(Error::InsufficientData("cannot mine rules on an empty corpus".into()));
    }
    let threshold = min_support * n as f64;
    let bits = Bits::new(n);
    let columns: Vec<Vec<u64>> =
        (0..corpus.n_cols()).map(|j| bits.from_iter(corpus.column(j).map(|v| v != 0.0))).collect();
    let mut out = Vec::new();
    // level-wise: frequent k-sets extended by larger feature indices
    let mut level: Vec<(Vec<usize>, Vec<u64>)> = Vec::new();
    for (j, col) in columns.iter().enumerate() {
        let support = bits.count(col);
        if support as f64 >= threshold {
            out.push(Antecedent { features: vec![j], support });
            level.push((vec![j], col.clone()));
        }
    }
    for _ in 1..max_literals {
        let mut next = Vec::new();
        for (features, cover) in &level {
            let last = *features.last().expect("nonempty clause");
            for (j, col) in columns.iter().enumerate().skip(last + 1) {
                let both = bits.and(cover, col);
                let support = bits.count(&both);
                if support > 0 && support as f64 >= threshold {
                    let mut f = features.clone();
                    f.push(j);
                    out.push(Antecedent { features: f.clone(), support });
                    next.push((f, both));
                }
            }
        }
        if next.is_empty() {
            break;
        }
        level = next;
    }
    if out.is_empty() {
        return Err(Error::Mining(format!(
            "no clause reaches support {min_support}; lower min_support"
        )));
    }
    let names: Vec<String> = corpus.schema().names().map(String::from).collect();
    Ok(AntecedentPool { antecedents: out, names: names.into() })
}

/// Row bitsets.
#[derive(Debug, Clone, Copy)]
struct Bits {
    n: usize,
    words: usize,
}

impl Bits {
    fn new(n: usize) -> Self {
        Self { n, words: n.div_ceil(64) }
    }

    fn from_iter(&self, it: impl Iterator<Item = bool>) -> Vec<u64> {
        let mut v = vec![0u64; self.words];
        for (i, b) in it.enumerate() {
            if b {
                v[i / 64] |= 1 << (i % 64);
            }
        }
        v
    }

    fn full(&self) -> Vec<u64> {
        let mut v = vec![u64::MAX; self.words];
        if self.n % 64 != 0 {
            if let Some(last) = v.last_mut() {
                *last = (1u64 << (self.n % 64)) - 1;
            }
        }
        v
    }

    fn and(&self, a: &[u64], b: &[u64]) -> Vec<u64> {
        a.iter().zip(b).map(|(x, y)| x & y).collect()
    }

    fn count(&self, a: &[u64]) -> usize {
        a.iter().map(|w| w.count_ones() as usize).sum()
    }
}

/// A fitted falling rule list.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleList {
    clauses: Vec<Vec<usize>>,
    /// `H + 1` risks; the last is the default.
    risks: Vec<f64>,
    names: Arc<[String]>,
}

impl RuleList {
    pub fn new(clauses: Vec<Vec<usize>>, risks: Vec<f64>, names: Arc<[String]>) -> Result<Self> {
        if risks.len() != clauses.len() + 1 {
            return Err(Error::Shape { expected: clauses.len() + 1, got: risks.len() });
        }
        if risks.windows(2).any(|w| !(w[1] <= w[0])) {
            return Err(Error::Fit("risk scores must be nonincreasing".into()));
        }
        Ok(Self { clauses, risks, names })
    }

    pub fn len(&self) -> usize {
        self.clauses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clauses.is_empty()
    }

    pub fn clauses(&self) -> &[Vec<usize>] {
        &self.clauses
    }

    pub fn risks(&self) -> &[f64] {
        &self.risks
    }

    pub fn is_monotone(&self) -> bool {
        self.risks.windows(2).all(|w| w[1] <= w[0])
    }

    /// Index of the first matching clause, or `len()` for the default rule.
    pub fn route(&self, x: &[f64]) -> usize {
        self.clauses
            .iter()
            .position(|c| c.iter().all(|&f| x[f] != 0.0))
            .unwrap_or(self.clauses.len())
    }

    /// `[A, B],[C]`: clauses in list order, literals by feature index, no risks.
    pub fn structure_key(&self) -> String {
        if self.clauses.is_empty() {
            return String::from("[]");
        }
        let mut s = String::new();
        for (i, c) in self.clauses.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            let _ = write!(s, "{}", clause_label(c, &self.names));
        }
        s
    }
}

impl StudentModel for RuleList {
    fn predict_proba(&self, x: &[f64]) -> f64 {
        clamp_prob(math::logistic(self.risks[self.route(x)]))
    }
}

pub fn frl_structure_key(list: &RuleList) -> String {
    list.structure_key()
}

/// Nonincreasing weighted isotonic regression (pool adjacent violators).
pub fn pava_nonincreasing(values: &[f64], weights: &[f64]) -> Vec<f64> {
    // blocks of (mean, weight, length)
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(values.len());
    for (&v, &w) in values.iter().zip(weights) {
        blocks.push((v, w, 1));
        while blocks.len() >= 2 {
            let (m2, w2, l2) = blocks[blocks.len() - 1];
            let (m1, w1, l1) = blocks[blocks.len() - 2];
            if m1 >= m2 {
                break;
            }
            blocks.truncate(blocks.len() - 2);
            blocks.push(((m1 * w1 + m2 * w2) / (w1 + w2), w1 + w2, l1 + l2));
        }
    }
    let mut out = Vec::with_capacity(values.len());
    for (m, _, l) in blocks {
        out.extend(core::iter::repeat(m).take(l));
    }
    out
}

/// `ln logistic(r)`, stable for large `|r|`.
fn ln_logistic(r: f64) -> f64 {
    if r >= 0.0 {
        -math::ln(1.0 + math::exp(-r))
    } else {
        r - math::ln(1.0 + math::exp(r))
    }
}

/// Per-segment `(rows, positives)` counts, risks and log posterior of a list
/// on a fixed corpus.
#[derive(Debug, Clone)]
pub struct ListScore {
    pub counts: Vec<(usize, usize)>,
    pub risks: Vec<f64>,
    pub log_likelihood: f64,
    pub log_prior: f64,
}

impl ListScore {
    pub fn log_posterior(&self) -> f64 {
        self.log_likelihood + self.log_prior
    }
}

/// Corpus-bound posterior over lists of pool antecedents.
pub struct FrlPosterior<'a> {
    pool: &'a AntecedentPool,
    bits: Bits,
    cover: Vec<Vec<u64>>,
    positive: Vec<u64>,
    max_len: usize,
}

impl<'a> FrlPosterior<'a> {
    pub fn new(corpus: &Dataset, pool: &'a AntecedentPool, max_len: usize) -> Result<Self> {
        if corpus.n_cols() != pool.names.len() {
            return Err(Error::Shape { expected: pool.names.len(), got: corpus.n_cols() });
        }
        let bits = Bits::new(corpus.n_rows());
        let cover = pool
            .antecedents
            .iter()
            .map(|a| bits.from_iter(corpus.rows().map(|x| a.features.iter().all(|&f| x[f] != 0.0))))
            .collect();
        let positive = bits.from_iter(corpus.labels().iter().map(|&y| y == 1));
        Ok(Self { pool, bits, cover, positive, max_len })
    }

    pub fn pool(&self) -> &AntecedentPool {
        self.pool
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    /// Geometric(1/2) prior on the length times a uniform prior over ordered
    /// selections of distinct antecedents.
    pub fn log_prior(&self, len: usize) -> f64 {
        let a = self.pool.len();
        let mut lp = len as f64 * math::ln(0.5);
        for i in 0..len {
            lp -= math::ln((a - i) as f64);
        }
        lp
    }

    pub fn score(&self, state: &[u32]) -> ListScore {
        let mut remaining = self.bits.full();
        let mut counts = Vec::with_capacity(state.len() + 1);
        for &a in state {
            let cov = &self.cover[a as usize];
            let (mut m, mut k) = (0usize, 0usize);
            for ((r, c), p) in remaining.iter_mut().zip(cov).zip(&self.positive) {
                let cap = *r & c;
                m += cap.count_ones() as usize;
                k += (cap & p).count_ones() as usize;
                *r &= !c;
            }
            counts.push((m, k));
        }
        let m = self.bits.count(&remaining);
        let k: usize = remaining.iter().zip(&self.positive).map(|(r, p)| (r & p).count_ones() as usize).sum();
        counts.push((m, k));
        let raw: Vec<f64> =
            counts.iter().map(|&(m, k)| math::ln((k as f64 + 1.0) / ((m - k) as f64 + 1.0))).collect();
        let weights: Vec<f64> = counts.iter().map(|&(m, _)| m as f64 + 2.0).collect();
        let risks = pava_nonincreasing(&raw, &weights);
        let log_likelihood = counts
            .iter()
            .zip(&risks)
            .map(|(&(m, k), &r)| k as f64 * ln_logistic(r) + (m - k) as f64 * ln_logistic(-r))
            .sum();
        ListScore { counts, risks, log_likelihood, log_prior: self.log_prior(state.len()) }
    }

    pub fn rule_list(&self, state: &[u32]) -> RuleList {
        let score = self.score(state);
        let clauses = state.iter().map(|&a| self.pool.antecedents[a as usize].features.clone()).collect();
        RuleList { clauses, risks: score.risks, names: self.pool.names.clone() }
    }
}

/// Metropolis-Hastings / Gibbs chain over lists of at most `max_len` clauses.
pub struct FrlChain<'a> {
    post: &'a FrlPosterior<'a>,
    state: Vec<u32>,
    log_post: f64,
    cache: BTreeMap<Vec<u32>, f64>,
    rng: StreamRng,
}

impl<'a> FrlChain<'a> {
    /// Chain started at the empty list.
    pub fn new(post: &'a FrlPosterior<'a>, rng: StreamRng) -> Self {
        let mut chain = Self { post, state: Vec::new(), log_post: 0.0, cache: BTreeMap::new(), rng };
        chain.log_post = chain.lp(&[]);
        chain
    }

    pub fn state(&self) -> &[u32] {
        &self.state
    }

    fn lp(&mut self, state: &[u32]) -> f64 {
        if let Some(&v) = self.cache.get(state) {
            return v;
        }
        let v = self.post.score(state).log_posterior();
        self.cache.insert(state.to_vec(), v);
        v
    }

    fn unused(&self) -> Vec<u32> {
        (0..self.post.pool.len() as u32).filter(|a| !self.state.contains(a)).collect()
    }

    fn accept(&mut self, proposal: Vec<u32>, log_q_ratio: f64) {
        let lp = self.lp(&proposal);
        let log_ratio = lp - self.log_post + log_q_ratio;
        if log_ratio >= 0.0 || self.rng.random::<f64>() < math::exp(log_ratio) {
            self.state = proposal;
            self.log_post = lp;
        }
    }

    /// One move; each kind has probability 1/4 and an infeasible draw stays.
    pub fn step(&mut self) {
        let h = self.state.len();
        let a = self.post.pool.len();
        match self.rng.random_range(0..4u8) {
            0 => {
                if h < self.post.max_len && h < a {
                    let unused = self.unused();
                    let pick = unused[self.rng.random_range(0..unused.len())];
                    let pos = self.rng.random_range(0..=h);
                    let mut proposal = self.state.clone();
                    proposal.insert(pos, pick);
                    self.accept(proposal, math::ln((a - h) as f64));
                }
            }
            1 => {
                if h >= 1 {
                    let pos = self.rng.random_range(0..h);
                    let mut proposal = self.state.clone();
                    proposal.remove(pos);
                    self.accept(proposal, -math::ln((a - h + 1) as f64));
                }
            }
            2 => {
                if h >= 2 {
                    let i = self.rng.random_range(0..h - 1);
                    let mut proposal = self.state.clone();
                    proposal.swap(i, i + 1);
                    self.accept(proposal, 0.0);
                }
            }
            _ => {
                if h >= 1 {
                    let pos = self.rng.random_range(0..h);
                    let mut options = self.unused();
                    options.push(self.state[pos]);
                    options.sort_unstable();
                    let lps: Vec<f64> = options
                        .iter()
                        .map(|&o| {
                            let mut s = self.state.clone();
                            s[pos] = o;
                            self.lp(&s)
                        })
                        .collect();
                    let top = lps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let weights: Vec<f64> = lps.iter().map(|&l| math::exp(l - top)).collect();
                    let total: f64 = weights.iter().sum();
                    let mut u = self.rng.random::<f64>() * total;
                    let mut choice = options.len() - 1;
                    for (i, w) in weights.iter().enumerate() {
                        if u < *w {
                            choice = i;
                            break;
                        }
                        u -= w;
                    }
                    self.state[pos] = options[choice];
                    self.log_post = lps[choice];
                }
            }
        }
    }
}

/// One chain of `steps` moves from the empty list on `corpus`; every visited
/// state becomes a candidate (revisits share one model allocation).
pub fn sample_frl_trajectory(
    corpus: &Dataset,
    pool: &AntecedentPool,
    c: usize,
    steps: usize,
    seed: u64,
) -> Result<Vec<Candidate>> {
    trajectory(corpus, pool, c, steps, stream(derive_seed(seed, FRL_TAG), 0))
}

const FRL_TAG: u64 = 0x6672_6c; // "frl"

fn trajectory(corpus: &Dataset, pool: &AntecedentPool, c: usize, steps: usize, rng: StreamRng) -> Result<Vec<Candidate>> {
    if steps == 0 {
        return Err(Error::Config("steps must be positive".into()));
    }
    let post = FrlPosterior::new(corpus, pool, c)?;
    let mut chain = FrlChain::new(&post, rng);
    let mut seen: BTreeMap<Vec<u32>, (Arc<RuleList>, StructureKey)> = BTreeMap::new();
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        chain.step();
        let state = chain.state().to_vec();
        let (model, key) = seen
            .entry(state)
            .or_insert_with_key(|s| {
                let list = post.rule_list(s);
                let key = StructureKey::new(list.structure_key());
                (Arc::new(list), key)
            })
            .clone();
        assert!(model.is_monotone(), "falling rule list lost monotone risks");
        let complexity = model.len();
        out.push(Candidate::new(model, key, complexity, Family::Frl));
    }
    Ok(out)
}

/// Union of `trajectories` chains, chain `i` run on corpus `base_index + i`.
pub fn frl_candidates(
    corpora: &dyn CorpusFactory,
    base_index: u64,
    n: usize,
    pool: &AntecedentPool,
    trajectories: usize,
    steps: usize,
    c: usize,
    seed: u64,
) -> Result<Vec<Candidate>> {
    if trajectories == 0 {
        return Err(Error::Config("need at least one trajectory".into()));
    }
    let chain_seed = derive_seed(seed, FRL_TAG);
    let parts = crate::par_map(trajectories, |i| {
        let index = base_index + i as u64;
        let corpus = corpora.corpus(index, n)?;
        trajectory(&corpus, pool, c, steps, stream(chain_seed, index))
    });
    let mut out = Vec::with_capacity(trajectories * steps);
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct FrlFamily {
    pub pool: Arc<AntecedentPool>,
    pub trajectories: usize,
    pub steps: usize,
    pub max_len: usize,
}

impl CandidateFamily for FrlFamily {
    fn family(&self) -> Family {
        Family::Frl
    }

    fn complexity_cap(&self) -> usize {
        self.max_len
    }

    fn generate(&self, ctx: &RoundContext<'_>, n: usize) -> Result<Vec<Candidate>> {
        frl_candidates(ctx.corpora, ctx.base_index, n, &self.pool, self.trajectories, self.steps, self.max_len, ctx.seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Column, ColumnKind, FeatureSchema};
    use proptest::prelude::*;

    fn binary(names: &[&str], rows: &[&[u8]], y: &[u8]) -> Dataset {
        let schema =
            FeatureSchema::new(names.iter().map(|n| Column::new(*n, ColumnKind::Binary)).collect()).unwrap();
        let x = rows.iter().flat_map(|r| r.iter().map(|&v| v as f64)).collect();
        Dataset::new(x, y.to_vec(), schema).unwrap()
    }

    fn toy() -> Dataset {
        binary(
            &["a", "b", "c"],
            &[&[1, 1, 1], &[1, 0, 1], &[0, 1, 1], &[0, 0, 1], &[1, 1, 1], &[0, 0, 1]],
            &[1, 1, 0, 0, 1, 0],
        )
    }

    #[test]
    fn mining_support_and_order() {
        let pool = mine_antecedents(&toy(), 1.0, 2).unwrap();
        assert_eq!(pool.len(), 1);
        assert_eq!(pool.label(0), "[c]");
        let pool = mine_antecedents(&toy(), 0.0, 1).unwrap();
        assert_eq!(pool.len(), 3);
        let pool = mine_antecedents(&toy(), 0.3, 2).unwrap();
        let labels: Vec<String> = (0..pool.len()).map(|i| pool.label(i)).collect();
        assert_eq!(labels, ["[a]", "[b]", "[c]", "[a, b]", "[a, c]", "[b, c]"]);
        assert_eq!(pool.antecedents()[3].support, 2);
        assert!(matches!(mine_antecedents(&binary(&["z"], &[&[0]], &[0]), 0.5, 2), Err(Error::Mining(_))));
    }

    #[test]
    fn key_and_routing() {
        let names: Arc<[String]> = ["IllDefinedMargin", "Age≥60", "IrregularShape", "SpiculatedMargin"]
            .iter()
            .map(|s| String::from(*s))
            .collect::<Vec<_>>()
            .into();
        let list = RuleList::new(vec![vec![0, 1], vec![2], vec![3]], vec![2.0, 1.0, 0.5, -1.0], names.clone()).unwrap();
        assert_eq!(list.structure_key(), "[IllDefinedMargin, Age≥60],[IrregularShape],[SpiculatedMargin]");
        assert_eq!(list.route(&[1.0, 0.0, 1.0, 0.0]), 1);
        assert_eq!(list.route(&[0.0, 0.0, 0.0, 0.0]), 3);
        assert!((list.predict_proba(&[1.0, 1.0, 1.0, 1.0]) - math::logistic(2.0)).abs() < 1e-15);
        let empty = RuleList::new(vec![], vec![0.0], names.clone()).unwrap();
        assert_eq!(empty.structure_key(), "[]");
        let other = RuleList::new(vec![vec![0, 1], vec![2], vec![3]], vec![0.0, -1.0, -2.0, -3.0], names).unwrap();
        assert_eq!(other.structure_key(), list.structure_key());
    }

    #[test]
    fn single_step_from_empty() {
        let data = toy();
        let pool = mine_antecedents(&data, 0.1, 2).unwrap();
        let c = sample_frl_trajectory(&data, &pool, 3, 1, 5).unwrap();
        assert_eq!(c.len(), 1);
        assert!(c[0].complexity <= 1);
    }

    #[test]
    fn trajectories_respect_cap() {
        let data = toy();
        let pool = mine_antecedents(&data, 0.1, 2).unwrap();
        let c = sample_frl_trajectory(&data, &pool, 3, 2000, 9).unwrap();
        assert!(c.iter().all(|c| c.complexity <= 3));
        assert!(c.iter().any(|c| c.complexity == 3));
    }

    proptest! {
        #[test]
        fn pava_is_monotone_and_mean_preserving(
            vw in proptest::collection::vec((-5.0f64..5.0, 0.5f64..10.0), 1..10),
        ) {
            let (v, w): (Vec<f64>, Vec<f64>) = vw.into_iter().unzip();
            let fit = pava_nonincreasing(&v, &w);
            prop_assert!(fit.windows(2).all(|p| p[1] <= p[0] + 1e-12));
            let a: f64 = v.iter().zip(&w).map(|(x, w)| x * w).sum();
            let b: f64 = fit.iter().zip(&w).map(|(x, w)| x * w).sum();
            prop_assert!((a - b).abs() < 1e-9);
            // already monotone input is a fixed point
            let mut sorted = v.clone();
            sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
            prop_assert_eq!(pava_nonincreasing(&sorted, &w), sorted);
        }
    }
}
