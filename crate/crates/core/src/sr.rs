//! Symbolic regression by genetic programming over `{+, *}` expression
//! trees, and the polynomial canonical form used as their structure key.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt::{self, Write};

use rand::Rng;

use crate::data::Dataset;
use crate::rng::{derive_seed, stream, StreamRng};
use crate::stability::nll;
use crate::student::{Candidate, CandidateFamily, Family, RoundContext, StructureKey, StudentModel};
use crate::{clamp_prob, math, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Token {
    Add,
    Mul,
    Var(u32),
    Const(f64),
}

impl Token {
    fn is_op(self) -> bool {
        matches!(self, Token::Add | Token::Mul)
    }
}

/// Expression tree in prefix order.
#[derive(Debug, Clone, PartialEq)]
pub struct ExprTree {
    tokens: Vec<Token>,
}

impl ExprTree {
    pub fn from_tokens(tokens: Vec<Token>) -> Result<Self> {
        let mut need = 1usize;
        for (i, t) in tokens.iter().enumerate() {
            if need == 0 {
                return Err(Error::Config(format!("trailing tokens after position {i}")));
            }
            need = need - 1 + if t.is_op() { 2 } else { 0 };
        }
        if need != 0 {
            return Err(Error::Config("incomplete expression".into()));
        }
        Ok(Self { tokens })
    }

    pub fn var(i: u32) -> Self {
        Self { tokens: alloc::vec![Token::Var(i)] }
    }

    pub fn constant(c: f64) -> Self {
        Self { tokens: alloc::vec![Token::Const(c)] }
    }

    pub fn add(a: ExprTree, b: ExprTree) -> Self {
        Self::join(Token::Add, a, b)
    }

    pub fn mul(a: ExprTree, b: ExprTree) -> Self {
        Self::join(Token::Mul, a, b)
    }

    fn join(op: Token, a: ExprTree, b: ExprTree) -> Self {
        let mut tokens = Vec::with_capacity(1 + a.tokens.len() + b.tokens.len());
        tokens.push(op);
        tokens.extend(a.tokens);
        tokens.extend(b.tokens);
        Self { tokens }
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Edges on the longest root-to-leaf path (a single leaf has depth 0).
    pub fn depth(&self) -> usize {
        let mut stack: Vec<usize> = Vec::new();
        for t in self.tokens.iter().rev() {
            if t.is_op() {
                let a = stack.pop().unwrap_or(0);
                let b = stack.pop().unwrap_or(0);
                stack.push(1 + a.max(b));
            } else {
                stack.push(0);
            }
        }
        stack.pop().unwrap_or(0)
    }

    /// One past the last token of the subtree rooted at `start`.
    fn subtree_end(&self, start: usize) -> usize {
        let mut need = 1usize;
        let mut i = start;
        while need > 0 {
            need = need - 1 + if self.tokens[i].is_op() { 2 } else { 0 };
            i += 1;
        }
        i
    }

    /// Depth of the node at `pos` from the root.
    fn node_level(&self, pos: usize) -> usize {
        // walk from the root tracking pending child slots per level
        let mut slots: Vec<usize> = Vec::new();
        for (i, t) in self.tokens.iter().enumerate() {
            if i == pos {
                return slots.len();
            }
            if t.is_op() {
                slots.push(2);
            } else {
                while let Some(last) = slots.last_mut() {
                    *last -= 1;
                    if *last == 0 {
                        slots.pop();
                    } else {
                        break;
                    }
                }
            }
        }
        slots.len()
    }

    fn replace(&self, start: usize, with: &[Token]) -> ExprTree {
        let end = self.subtree_end(start);
        let mut tokens = Vec::with_capacity(self.tokens.len() - (end - start) + with.len());
        tokens.extend_from_slice(&self.tokens[..start]);
        tokens.extend_from_slice(with);
        tokens.extend_from_slice(&self.tokens[end..]);
        ExprTree { tokens }
    }

    /// Raw value on `x`.
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.eval_at(0, x).0
    }

    fn eval_at(&self, i: usize, x: &[f64]) -> (f64, usize) {
        match self.tokens[i] {
            Token::Var(j) => (x[j as usize], i + 1),
            Token::Const(c) => (c, i + 1),
            op => {
                let (a, next) = self.eval_at(i + 1, x);
                let (b, end) = self.eval_at(next, x);
                (if op == Token::Add { a + b } else { a * b }, end)
            }
        }
    }

    pub fn max_var(&self) -> Option<u32> {
        self.tokens
            .iter()
            .filter_map(|t| if let Token::Var(j) = t { Some(*j) } else { None })
            .max()
    }

    fn fmt_at(&self, i: usize, f: &mut fmt::Formatter<'_>) -> core::result::Result<usize, fmt::Error> {
        match self.tokens[i] {
            Token::Var(j) => {
                write!(f, "X{j}")?;
                Ok(i + 1)
            }
            Token::Const(c) => {
                write!(f, "{c}")?;
                Ok(i + 1)
            }
            op => {
                f.write_str("(")?;
                let next = self.fmt_at(i + 1, f)?;
                f.write_str(if op == Token::Add { " + " } else { " * " })?;
                let end = self.fmt_at(next, f)?;
                f.write_str(")")?;
                Ok(end)
            }
        }
    }
}

impl fmt::Display for ExprTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_at(0, f).map(|_| ())
    }
}

/// `clamp(logistic(tree(x)))`.
pub fn sr_predict(tree: &ExprTree, x: &[f64]) -> f64 {
    clamp_prob(math::logistic(tree.eval(x)))
}

impl StudentModel for ExprTree {
    fn predict_proba(&self, x: &[f64]) -> f64 {
        sr_predict(self, x)
    }
}

// Monomial (sorted variable indices) -> (coefficient, sum of |term|s).
// The magnitude lets cancellation be recognised independently of the order
// in which floating-point terms were added.
type Poly = BTreeMap<Vec<u32>, (f64, f64)>;

fn expand(tree: &ExprTree, i: usize) -> (Poly, usize) {
    match tree.tokens[i] {
        Token::Var(j) => (Poly::from([(alloc::vec![j], (1.0, 1.0))]), i + 1),
        Token::Const(c) => (Poly::from([(Vec::new(), (c, math::abs(c)))]), i + 1),
        op => {
            let (a, next) = expand(tree, i + 1);
            let (b, end) = expand(tree, next);
            let mut out = Poly::new();
            if op == Token::Add {
                for (m, (c, g)) in a.into_iter().chain(b) {
                    let e = out.entry(m).or_insert((0.0, 0.0));
                    e.0 += c;
                    e.1 += g;
                }
            } else {
                for (ma, (ca, ga)) in &a {
                    for (mb, (cb, gb)) in &b {
                        let mut m = ma.clone();
                        m.extend_from_slice(mb);
                        m.sort_unstable();
                        let e = out.entry(m).or_insert((0.0, 0.0));
                        e.0 += ca * cb;
                        e.1 += ga * gb;
                    }
                }
            }
            (out, end)
        }
    }
}

/// Monomial support of the expanded polynomial: each kept monomial as its
/// sorted variable list (the constant term is the empty list).
pub fn monomials(tree: &ExprTree) -> Vec<Vec<u32>> {
    let (poly, _) = expand(tree, 0);
    poly.into_iter()
        .filter(|(_, (c, g))| c.is_finite() && math::abs(*c) > 1e-9 * g)
        .map(|(m, _)| m)
        .collect()
}

/// Canonical key: expand into monomials, drop coefficients, list monomials in
/// index order with the constant last, e.g. `X3 + X4*X4 + 1`.
pub fn canonicalize(tree: &ExprTree) -> String {
    let monos = monomials(tree);
    let mut parts: Vec<String> = Vec::new();
    let mut has_const = false;
    for m in monos {
        if m.is_empty() {
            has_const = true;
            continue;
        }
        let mut s = String::new();
        for (k, v) in m.iter().enumerate() {
            if k > 0 {
                s.push('*');
            }
            let _ = write!(s, "X{v}");
        }
        parts.push(s);
    }
    if has_const {
        parts.push(String::from("1"));
    }
    if parts.is_empty() {
        return String::from("0");
    }
    parts.join(" + ")
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GpConfig {
    pub population: usize,
    pub generations: usize,
    pub tournament_size: usize,
    pub p_crossover: f64,
    pub p_mutation: f64,
    /// Depth cap `C`.
    pub max_depth: usize,
    pub seed: u64,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            population: 2000,
            generations: 20,
            tournament_size: 20,
            p_crossover: 0.9,
            p_mutation: 0.08,
            max_depth: 3,
            seed: 0,
        }
    }
}

impl GpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population < 2 {
            return Err(Error::Config(format!("population must be at least 2, got {}", self.population)));
        }
        if self.tournament_size == 0 {
            return Err(Error::Config("tournament_size must be positive".into()));
        }
        if self.max_depth == 0 {
            return Err(Error::Config("max_depth must be positive".into()));
        }
        for (name, p) in [("p_crossover", self.p_crossover), ("p_mutation", self.p_mutation)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if self.p_crossover + self.p_mutation > 1.0 + 1e-12 {
            return Err(Error::Config("p_crossover + p_mutation must not exceed 1".into()));
        }
        Ok(())
    }
}

/// Mean cross-entropy of `logistic(tree)`; `inf` when not finite.
pub fn fitness(tree: &ExprTree, corpus: &Dataset) -> f64 {
    let total: f64 = corpus
        .rows()
        .zip(corpus.labels())
        .map(|(x, &y)| nll(y, sr_predict(tree, x)))
        .sum();
    let f = total / corpus.n_rows() as f64;
    if f.is_finite() {
        f
    } else {
        f64::INFINITY
    }
}

struct Gen<'a> {
    rng: &'a mut StreamRng,
    n_vars: u32,
}

impl Gen<'_> {
    fn terminal(&mut self) -> Token {
        if self.n_vars > 0 && self.rng.random_bool(0.5) {
            Token::Var(self.rng.random_range(0..self.n_vars))
        } else {
            Token::Const(self.rng.random_range(-1.0..=1.0))
        }
    }

    fn op(&mut self) -> Token {
        if self.rng.random_bool(0.5) {
            Token::Add
        } else {
            Token::Mul
        }
    }

    fn tree(&mut self, depth: usize, full: bool, out: &mut Vec<Token>) {
        let leaf = depth == 0 || (!full && self.rng.random_bool(0.3));
        if leaf {
            let t = self.terminal();
            out.push(t);
        } else {
            let op = self.op();
            out.push(op);
            self.tree(depth - 1, full, out);
            self.tree(depth - 1, full, out);
        }
    }

    fn random_tree(&mut self, depth: usize, full: bool) -> ExprTree {
        let mut tokens = Vec::new();
        self.tree(depth, full, &mut tokens);
        ExprTree { tokens }
    }
}

/// Result of a GP run.
#[derive(Debug, Clone)]
pub struct GpRun {
    pub population: Vec<ExprTree>,
    pub fitness: Vec<f64>,
    /// Best fitness of the initial population and after each generation.
    pub best_history: Vec<f64>,
}

fn score_all(pop: &[ExprTree], corpus: &Dataset) -> Vec<f64> {
    crate::par_map(pop.len(), |i| fitness(&pop[i], corpus))
}

fn argmin(f: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in f.iter().enumerate() {
        if v < f[best] {
            best = i;
        }
    }
    best
}

/// Evolve a population on `corpus`: ramped half-and-half start, tournament
/// selection, subtree crossover, point or subtree mutation, one elite.
/// Oversized children are rejected and the parent is copied instead.
pub fn run_gp(corpus: &Dataset, cfg: &GpConfig) -> Result<GpRun> {
    cfg.validate()?;
    if corpus.n_rows() == 0 {
        return Err(Error::InsufficientData("symbolic regression needs a nonempty corpus".into()));
    }
    let mut rng = stream(derive_seed(cfg.seed, SR_TAG), 0);
    let n_vars = corpus.n_cols() as u32;
    let mut gen = Gen { rng: &mut rng, n_vars };
    let mut pop: Vec<ExprTree> = (0..cfg.population)
        .map(|i| {
            let depth = 1 + (i / 2) % cfg.max_depth;
            gen.random_tree(depth, i % 2 == 0)
        })
        .collect();
    let mut fit = score_all(&pop, corpus);
    let mut history = alloc::vec![fit[argmin(&fit)]];
    for _ in 0..cfg.generations {
        let elite = argmin(&fit);
        let mut next = Vec::with_capacity(cfg.population);
        next.push(pop[elite].clone());
        while next.len() < cfg.population {
            let a = tournament(&fit, cfg.tournament_size, gen.rng);
            let u: f64 = gen.rng.random();
            let child = if u < cfg.p_crossover {
                let b = tournament(&fit, cfg.tournament_size, gen.rng);
                crossover(&pop[a], &pop[b], gen.rng)
            } else if u < cfg.p_crossover + cfg.p_mutation {
                mutate(&pop[a], cfg.max_depth, &mut gen)
            } else {
                pop[a].clone()
            };
            next.push(if child.depth() <= cfg.max_depth { child } else { pop[a].clone() });
        }
        pop = next;
        fit = score_all(&pop, corpus);
        history.push(fit[argmin(&fit)]);
    }
    Ok(GpRun { population: pop, fitness: fit, best_history: history })
}

const SR_TAG: u64 = 0x7372; // "sr"

fn tournament(fit: &[f64], size: usize, rng: &mut StreamRng) -> usize {
    let mut best = rng.random_range(0..fit.len());
    for _ in 1..size {
        let c = rng.random_range(0..fit.len());
        if fit[c] < fit[best] || (fit[c] == fit[best] && c < best) {
            best = c;
        }
    }
    best
}

fn crossover(a: &ExprTree, b: &ExprTree, rng: &mut StreamRng) -> ExprTree {
    let i = rng.random_range(0..a.len());
    let j = rng.random_range(0..b.len());
    a.replace(i, &b.tokens[j..b.subtree_end(j)])
}

fn mutate(a: &ExprTree, max_depth: usize, gen: &mut Gen<'_>) -> ExprTree {
    let i = gen.rng.random_range(0..a.len());
    if gen.rng.random_bool(0.5) {
        let mut t = a.clone();
        t.tokens[i] = match t.tokens[i] {
            Token::Add => Token::Mul,
            Token::Mul => Token::Add,
            _ => gen.terminal(),
        };
        t
    } else {
        let room = max_depth.saturating_sub(a.node_level(i));
        let depth = gen.rng.random_range(0..=room);
        let sub = gen.random_tree(depth, false);
        a.replace(i, &sub.tokens)
    }
}

/// Final population as candidates. Non-finite individuals are dropped and
/// identical trees share one model.
pub fn evolve(corpus: &Dataset, cfg: &GpConfig) -> Result<Vec<Candidate>> {
    let run = run_gp(corpus, cfg)?;
    let mut shared: BTreeMap<Vec<(u8, u64)>, Candidate> = BTreeMap::new();
    let mut out = Vec::with_capacity(run.population.len());
    for (tree, f) in run.population.into_iter().zip(run.fitness) {
        if !f.is_finite() {
            continue;
        }
        let fingerprint: Vec<(u8, u64)> = tree
            .tokens
            .iter()
            .map(|t| match t {
                Token::Add => (0, 0),
                Token::Mul => (1, 0),
                Token::Var(j) => (2, *j as u64),
                Token::Const(c) => (3, c.to_bits()),
            })
            .collect();
        let cand = shared
            .entry(fingerprint)
            .or_insert_with(|| {
                let key = StructureKey::new(canonicalize(&tree));
                let depth = tree.depth();
                Candidate::new(Arc::new(tree), key, depth, Family::Sr)
            })
            .clone();
        out.push(cand);
    }
    if out.is_empty() {
        return Err(Error::Fit("every individual produced a non-finite loss".into()));
    }
    Ok(out)
}

/// One GP run per round on corpus `base_index`.
#[derive(Debug, Clone, Copy)]
pub struct SrFamily {
    pub gp: GpConfig,
}

impl CandidateFamily for SrFamily {
    fn family(&self) -> Family {
        Family::Sr
    }

    fn complexity_cap(&self) -> usize {
        self.gp.max_depth
    }

    fn generate(&self, ctx: &RoundContext<'_>, n: usize) -> Result<Vec<Candidate>> {
        let corpus = ctx.corpora.corpus(ctx.base_index, n)?;
        let cfg = GpConfig { seed: derive_seed(ctx.seed ^ self.gp.seed, ctx.round as u64), ..self.gp };
        evolve(&corpus, &cfg)
    }
}
