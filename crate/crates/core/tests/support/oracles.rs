// Independent reference implementations shared by the core integration
// tests and the acceptance suite. Each check returns a short summary on
// success and a description of the first mismatch on failure.
#![allow(dead_code)]

use std::collections::BTreeMap;

use distill_core::cart::{fit_cart, Node};
use distill_core::data::{Column, ColumnKind, Dataset, FeatureSchema};
use distill_core::frl::{mine_antecedents, AntecedentPool, FrlChain, FrlPosterior};
use distill_core::rng::stream;
use distill_core::sr::{canonicalize, monomials, ExprTree};
use distill_core::stats::{phi, upper_tail, z_quantile};
use rand::Rng;

pub type Check = Result<String, String>;

// ---------------------------------------------------------------- normal CDF

const PHI_REFERENCE: &str = include_str!("../data/phi_reference.csv");

pub fn phi_reference_points() -> Vec<(f64, f64)> {
    PHI_REFERENCE
        .lines()
        .skip(1)
        .map(|l| {
            let (x, p) = l.split_once(',').expect("two columns");
            (x.parse().expect("x"), p.parse().expect("phi"))
        })
        .collect()
}

pub fn check_phi_reference() -> Check {
    let pts = phi_reference_points();
    let mut worst = 0.0f64;
    for &(x, want) in &pts {
        let err = (phi(x) - want).abs();
        if !(err < 1e-9) {
            return Err(format!("phi({x}) = {} vs reference {want}", phi(x)));
        }
        worst = worst.max(err);
    }
    Ok(format!("{} points, max abs error {worst:.2e}", pts.len()))
}

pub fn check_quantile_round_trip() -> Check {
    let mut worst = 0.0f64;
    for i in 0..=12_000 {
        let x = -6.0 + 12.0 * i as f64 / 12_000.0;
        let back = z_quantile(upper_tail(x)).map_err(|e| e.to_string())?;
        let err = (back - x).abs();
        if !(err < 1e-6) {
            return Err(format!("z_quantile(1 - phi({x})) = {back}"));
        }
        worst = worst.max(err);
    }
    Ok(format!("max round-trip error {worst:.2e} on [-6, 6]"))
}

// ---------------------------------------------------------------- CART

/// Weighted Gini of a split, normalized by the node size.
fn split_impurity(left: &[u8], right: &[u8]) -> f64 {
    let g = |ys: &[u8]| {
        if ys.is_empty() {
            return 0.0;
        }
        let p = ys.iter().filter(|&&y| y == 1).count() as f64 / ys.len() as f64;
        1.0 - p * p - (1.0 - p) * (1.0 - p)
    };
    let m = (left.len() + right.len()) as f64;
    (left.len() as f64 * g(left) + right.len() as f64 * g(right)) / m
}

/// Exhaustive search over every (feature, midpoint) pair, ties to the lower
/// feature and then the lower threshold.
pub fn brute_force_split(rows: &[Vec<f64>], ys: &[u8]) -> Option<(usize, f64, f64)> {
    let d = rows.first().map_or(0, Vec::len);
    let mut best: Option<(usize, f64, f64)> = None;
    for f in 0..d {
        let mut vals: Vec<f64> = rows.iter().map(|r| r[f]).collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        vals.dedup();
        for w in vals.windows(2) {
            let t = 0.5 * (w[0] + w[1]);
            let (mut l, mut r) = (Vec::new(), Vec::new());
            for (row, &y) in rows.iter().zip(ys) {
                if row[f] <= t {
                    l.push(y)
                } else {
                    r.push(y)
                }
            }
            let imp = split_impurity(&l, &r);
            let better = match best {
                None => true,
                Some((_, _, b)) => imp < b - 1e-12,
            };
            if better {
                best = Some((f, t, imp));
            }
        }
    }
    best
}

fn node_impurity(ys: &[u8]) -> f64 {
    split_impurity(ys, &[])
}

fn random_dataset(seed: u64) -> Dataset {
    let mut rng = stream(seed, 0);
    let n = rng.random_range(2..=50usize);
    let d = rng.random_range(1..=3usize);
    let levels = rng.random_range(2..=8u32);
    let continuous = rng.random_bool(0.3);
    let mut x = Vec::with_capacity(n * d);
    for _ in 0..n * d {
        x.push(if continuous { rng.random::<f64>() } else { rng.random_range(0..levels) as f64 });
    }
    let y: Vec<u8> = (0..n)
        .map(|i| {
            let signal = x[i * d] > levels as f64 / 2.0 || (continuous && x[i * d] > 0.5);
            u8::from(if rng.random_bool(0.25) { !signal } else { signal })
        })
        .collect();
    let names: Vec<String> = (0..d).map(|j| format!("f{j}")).collect();
    Dataset::new(x, y, FeatureSchema::continuous(&names)).unwrap()
}

/// Every internal node of a depth-3 tree on `datasets` random corpora must
/// carry the brute-force best split of the rows routed to it; every leaf
/// must be pure, at the depth cap, or have no impurity-reducing split.
pub fn check_cart_oracle(datasets: u64) -> Check {
    let mut splits = 0usize;
    let mut worst = 0.0f64;
    for seed in 0..datasets {
        let data = random_dataset(seed);
        let tree = fit_cart(&data, 3);
        let rows: Vec<Vec<f64>> = data.rows().map(<[f64]>::to_vec).collect();
        // route each row to its node path
        let mut stack = vec![(0usize, (0..rows.len()).collect::<Vec<_>>(), 0usize)];
        while let Some((id, idx, depth)) = stack.pop() {
            let sub: Vec<Vec<f64>> = idx.iter().map(|&i| rows[i].clone()).collect();
            let ys: Vec<u8> = idx.iter().map(|&i| data.labels()[i]).collect();
            let oracle = brute_force_split(&sub, &ys);
            match &tree.nodes()[id] {
                Node::Split { feature, threshold, left, right } => {
                    let (f, t, imp) = oracle.ok_or_else(|| format!("dataset {seed}: split where none exists"))?;
                    let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| rows[i][*feature] <= *threshold);
                    let ly: Vec<u8> = l.iter().map(|&i| data.labels()[i]).collect();
                    let ry: Vec<u8> = r.iter().map(|&i| data.labels()[i]).collect();
                    let got = split_impurity(&ly, &ry);
                    worst = worst.max((got - imp).abs());
                    if (got - imp).abs() > 1e-12 || *feature != f || *threshold != t {
                        return Err(format!(
                            "dataset {seed} node {id}: greedy ({feature}, {threshold}, {got}) vs oracle ({f}, {t}, {imp})"
                        ));
                    }
                    splits += 1;
                    stack.push((*left as usize, l, depth + 1));
                    stack.push((*right as usize, r, depth + 1));
                }
                Node::Leaf { .. } => {
                    let pure = ys.iter().all(|&y| y == ys[0]);
                    let reducible = oracle.is_some_and(|(_, _, imp)| imp < node_impurity(&ys) - 1e-12);
                    if !pure && depth < 3 && reducible {
                        return Err(format!("dataset {seed} node {id}: leaf although a split reduces impurity"));
                    }
                }
            }
        }
    }
    Ok(format!("{datasets} datasets, {splits} splits matched, max impurity gap {worst:.1e}"))
}

// ---------------------------------------------------------------- SR

#[derive(Debug, Clone)]
pub enum E {
    Add(Box<E>, Box<E>),
    Mul(Box<E>, Box<E>),
    Var(u32),
    Const(f64),
}

impl E {
    pub fn to_tree(&self) -> ExprTree {
        match self {
            E::Add(a, b) => ExprTree::add(a.to_tree(), b.to_tree()),
            E::Mul(a, b) => ExprTree::mul(a.to_tree(), b.to_tree()),
            E::Var(i) => ExprTree::var(*i),
            E::Const(c) => ExprTree::constant(*c),
        }
    }

    fn size(&self) -> usize {
        match self {
            E::Add(a, b) | E::Mul(a, b) => 1 + a.size() + b.size(),
            _ => 1,
        }
    }
}

pub fn random_expr<R: Rng>(rng: &mut R, depth: usize, constant: &mut dyn FnMut(&mut R) -> f64) -> E {
    if depth == 0 || rng.random_bool(0.3) {
        if rng.random_bool(0.6) {
            E::Var(rng.random_range(0..5))
        } else {
            E::Const(constant(rng))
        }
    } else {
        let a = Box::new(random_expr(rng, depth - 1, constant));
        let b = Box::new(random_expr(rng, depth - 1, constant));
        if rng.random_bool(0.5) {
            E::Add(a, b)
        } else {
            E::Mul(a, b)
        }
    }
}

/// Apply one semantics-preserving rewrite at node number `target` (preorder).
fn rewrite_at<R: Rng>(e: E, target: &mut usize, rng: &mut R) -> E {
    if *target == 0 {
        *target = usize::MAX;
        return rewrite_here(e, rng);
    }
    *target -= 1;
    match e {
        E::Add(a, b) => {
            let a = rewrite_at(*a, target, rng);
            let b = rewrite_at(*b, target, rng);
            E::Add(Box::new(a), Box::new(b))
        }
        E::Mul(a, b) => {
            let a = rewrite_at(*a, target, rng);
            let b = rewrite_at(*b, target, rng);
            E::Mul(Box::new(a), Box::new(b))
        }
        leaf => leaf,
    }
}

fn rewrite_here<R: Rng>(e: E, rng: &mut R) -> E {
    match (rng.random_range(0..3), e) {
        // commute
        (0, E::Add(a, b)) => E::Add(b, a),
        (0, E::Mul(a, b)) => E::Mul(b, a),
        // re-associate in whichever direction applies
        (1, E::Add(a, b)) => match (*a, *b) {
            (E::Add(x, y), c) => E::Add(x, Box::new(E::Add(y, Box::new(c)))),
            (x, E::Add(y, z)) => E::Add(Box::new(E::Add(Box::new(x), y)), z),
            (x, y) => E::Add(Box::new(x), Box::new(y)),
        },
        (1, E::Mul(a, b)) => match (*a, *b) {
            (E::Mul(x, y), c) => E::Mul(x, Box::new(E::Mul(y, Box::new(c)))),
            (x, E::Mul(y, z)) => E::Mul(Box::new(E::Mul(Box::new(x), y)), z),
            (x, y) => E::Mul(Box::new(x), Box::new(y)),
        },
        // fold constants
        (_, E::Add(a, b)) => match (*a, *b) {
            (E::Const(x), E::Const(y)) => E::Const(x + y),
            (x, y) => E::Add(Box::new(x), Box::new(y)),
        },
        (_, E::Mul(a, b)) => match (*a, *b) {
            (E::Const(x), E::Const(y)) => E::Const(x * y),
            (x, y) => E::Mul(Box::new(x), Box::new(y)),
        },
        // unfold c into (c - 1) + 1
        (_, E::Const(c)) => E::Add(Box::new(E::Const(c - 1.0)), Box::new(E::Const(1.0))),
        (_, v) => v,
    }
}

pub fn rewrite_randomly<R: Rng>(mut e: E, rewrites: usize, rng: &mut R) -> E {
    for _ in 0..rewrites {
        let mut target = rng.random_range(0..e.size());
        e = rewrite_at(e, &mut target, rng);
    }
    e
}

/// Random trees stay key-equal under random chains of rewrites.
pub fn check_sr_rewrites(trees: u64) -> Check {
    let mut rng = stream(0x5eed, 1);
    let mut uniform = |r: &mut distill_core::rng::StreamRng| r.random_range(-1.0..1.0);
    let mut rewrites = 0usize;
    for i in 0..trees {
        let e = random_expr(&mut rng, 4, &mut uniform);
        let key = canonicalize(&e.to_tree());
        let k = rng.random_range(1..12);
        let e2 = rewrite_randomly(e.clone(), k, &mut rng);
        rewrites += k;
        let key2 = canonicalize(&e2.to_tree());
        if key != key2 {
            return Err(format!("tree {i}: `{}` -> `{key}` but rewritten `{}` -> `{key2}`", e.to_tree(), e2.to_tree()));
        }
    }
    let pairs = [
        (ExprTree::add(ExprTree::var(0), ExprTree::var(1)), ExprTree::add(ExprTree::var(1), ExprTree::var(0))),
        (
            ExprTree::add(ExprTree::var(0), ExprTree::constant(1.0)),
            ExprTree::add(ExprTree::var(0), ExprTree::add(ExprTree::constant(2.0), ExprTree::constant(-1.0))),
        ),
    ];
    for (a, b) in &pairs {
        if canonicalize(a) != canonicalize(b) {
            return Err(format!("`{a}` and `{b}` have different keys"));
        }
    }
    Ok(format!("{trees} trees, {rewrites} rewrites, x+y ~ y+x and x+1 ~ x+2-1 key-equal"))
}

type Poly = Vec<(Vec<u32>, f64)>;

fn expand_oracle(e: &E) -> Poly {
    match e {
        E::Var(i) => vec![(vec![*i], 1.0)],
        E::Const(c) => vec![(vec![], *c)],
        E::Add(a, b) => {
            let mut p = expand_oracle(a);
            p.extend(expand_oracle(b));
            p
        }
        E::Mul(a, b) => {
            let (pa, pb) = (expand_oracle(a), expand_oracle(b));
            let mut out = Vec::new();
            for (ma, ca) in &pa {
                for (mb, cb) in &pb {
                    let mut m = ma.clone();
                    m.extend(mb);
                    m.sort();
                    out.push((m, ca * cb));
                }
            }
            out
        }
    }
}

/// Monomial support from unmerged term lists, on trees whose constants are
/// dyadic so every coefficient sum is exact.
pub fn check_sr_expansion(trees: u64) -> Check {
    let mut rng = stream(0x5eed, 2);
    let mut dyadic = |r: &mut distill_core::rng::StreamRng| r.random_range(-8i32..=8) as f64 / 8.0;
    for i in 0..trees {
        let e = random_expr(&mut rng, 4, &mut dyadic);
        let mut merged: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
        for (m, c) in expand_oracle(&e) {
            *merged.entry(m).or_default() += c;
        }
        let want: Vec<Vec<u32>> = merged.into_iter().filter(|(_, c)| *c != 0.0).map(|(m, _)| m).collect();
        let got = monomials(&e.to_tree());
        if want != got {
            return Err(format!("tree {i} `{}`: oracle {want:?} vs {got:?}", e.to_tree()));
        }
    }
    Ok(format!("{trees} dyadic trees match the expansion oracle"))
}

// ---------------------------------------------------------------- FRL

fn binary_dataset(rows: &[[u8; 2]], y: &[u8]) -> Dataset {
    let schema = FeatureSchema::new(vec![Column::new("a", ColumnKind::Binary), Column::new("b", ColumnKind::Binary)]).unwrap();
    let x = rows.iter().flat_map(|r| r.iter().map(|&v| v as f64)).collect();
    Dataset::new(x, y.to_vec(), schema).unwrap()
}

/// Toy corpus with two overlapping single-literal clauses whose posterior
/// spreads over all five lists of length at most two.
pub fn frl_toy() -> (Dataset, AntecedentPool) {
    let mut rows = Vec::new();
    let mut y = Vec::new();
    let pattern: [([u8; 2], u8, usize); 8] = [
        ([1, 1], 1, 3),
        ([1, 1], 0, 1),
        ([1, 0], 1, 2),
        ([1, 0], 0, 2),
        ([0, 1], 1, 2),
        ([0, 1], 0, 1),
        ([0, 0], 1, 2),
        ([0, 0], 0, 3),
    ];
    for (r, label, count) in pattern {
        for _ in 0..count {
            rows.push(r);
            y.push(label);
        }
    }
    let data = binary_dataset(&rows, &y);
    let pool = mine_antecedents(&data, 0.0, 1).unwrap();
    (data, pool)
}

fn isotonic_nonincreasing_brute(v: &[f64], w: &[f64]) -> Vec<f64> {
    // minimum weighted squared error over all ways to cut into contiguous
    // blocks with block means nonincreasing
    let n = v.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0u32..(1 << (n - 1)) {
        let mut fit = Vec::new();
        let mut start = 0;
        for i in 0..n {
            if i == n - 1 || mask & (1 << i) != 0 {
                let ws: f64 = w[start..=i].iter().sum();
                let m: f64 = (start..=i).map(|k| v[k] * w[k]).sum::<f64>() / ws;
                fit.extend(std::iter::repeat(m).take(i + 1 - start));
                start = i + 1;
            }
        }
        if fit.windows(2).any(|p| p[1] > p[0] + 1e-12) {
            continue;
        }
        let sse: f64 = fit.iter().zip(v).zip(w).map(|((f, x), w)| w * (f - x) * (f - x)).sum();
        if best.as_ref().map_or(true, |(b, _)| sse < *b - 1e-12) {
            best = Some((sse, fit));
        }
    }
    best.unwrap().1
}

/// Unnormalized log posterior computed row by row.
pub fn naive_log_posterior(data: &Dataset, pool: &AntecedentPool, list: &[usize]) -> f64 {
    let h = list.len();
    let mut counts = vec![(0usize, 0usize); h + 1];
    for (x, &y) in data.rows().zip(data.labels()) {
        let seg = list
            .iter()
            .position(|&a| pool.antecedents()[a].features.iter().all(|&f| x[f] == 1.0))
            .unwrap_or(h);
        counts[seg].0 += 1;
        counts[seg].1 += y as usize;
    }
    let raw: Vec<f64> = counts.iter().map(|&(m, k)| ((k as f64 + 1.0) / ((m - k) as f64 + 1.0)).ln()).collect();
    let w: Vec<f64> = counts.iter().map(|&(m, _)| m as f64 + 2.0).collect();
    let risks = isotonic_nonincreasing_brute(&raw, &w);
    let mut ll = 0.0;
    for (&(m, k), &r) in counts.iter().zip(&risks) {
        let p = 1.0 / (1.0 + (-r).exp());
        ll += k as f64 * p.ln() + (m - k) as f64 * (1.0 - p).ln();
    }
    let a = pool.len();
    let mut prior = h as f64 * 0.5f64.ln();
    for i in 0..h {
        prior -= ((a - i) as f64).ln();
    }
    ll + prior
}

/// Every ordered list of distinct antecedents with length at most `c`.
pub fn enumerate_lists(a: usize, c: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    let mut frontier = vec![vec![]];
    for _ in 0..c {
        let mut next = Vec::new();
        for l in &frontier {
            for i in 0..a {
                if !l.contains(&i) {
                    let mut m: Vec<usize> = l.clone();
                    m.push(i);
                    next.push(m);
                }
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// Visit frequencies of `steps` chain moves vs the enumerated posterior,
/// with batch-means standard errors.
pub fn check_frl_toy(steps: usize, seed: u64) -> Check {
    let (data, pool) = frl_toy();
    if pool.len() != 2 {
        return Err(format!("toy pool has {} antecedents, expected 2", pool.len()));
    }
    let lists = enumerate_lists(pool.len(), 2);
    let lp: Vec<f64> = lists.iter().map(|l| naive_log_posterior(&data, &pool, l)).collect();
    let top = lp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = lp.iter().map(|l| (l - top).exp()).sum();
    let exact: Vec<f64> = lp.iter().map(|l| (l - top).exp() / z).collect();

    let post = FrlPosterior::new(&data, &pool, 2).map_err(|e| e.to_string())?;
    for (l, want) in lists.iter().zip(&lp) {
        let state: Vec<u32> = l.iter().map(|&a| a as u32).collect();
        let got = post.score(&state).log_posterior();
        if (got - want).abs() > 1e-9 {
            return Err(format!("log posterior of {l:?}: {got} vs naive {want}"));
        }
        if !post.rule_list(&state).is_monotone() {
            return Err(format!("list {l:?} has non-monotone risks"));
        }
    }

    let mut chain = FrlChain::new(&post, stream(seed, 0));
    let batches = 100usize;
    let per = steps / batches;
    let mut batch_freq = vec![vec![0.0f64; lists.len()]; batches];
    for freq in batch_freq.iter_mut() {
        for _ in 0..per {
            chain.step();
            let s: Vec<usize> = chain.state().iter().map(|&a| a as usize).collect();
            if s.len() > 2 {
                return Err(format!("chain exceeded the length cap: {s:?}"));
            }
            if !post.rule_list(chain.state()).is_monotone() {
                return Err(format!("non-monotone risks at state {s:?}"));
            }
            let idx = lists.iter().position(|l| *l == s).ok_or("unknown state")?;
            freq[idx] += 1.0 / per as f64;
        }
    }
    let mut report = Vec::new();
    for (i, l) in lists.iter().enumerate() {
        let mean: f64 = batch_freq.iter().map(|b| b[i]).sum::<f64>() / batches as f64;
        let var: f64 =
            batch_freq.iter().map(|b| (b[i] - mean) * (b[i] - mean)).sum::<f64>() / (batches - 1) as f64;
        let se = (var / batches as f64).sqrt();
        let dev = (mean - exact[i]).abs();
        if !(dev <= 3.0 * se) {
            return Err(format!("list {l:?}: visit frequency {mean:.4} vs posterior {:.4} (se {se:.4})", exact[i]));
        }
        report.push(format!("{l:?}: {mean:.4}/{:.4}", exact[i]));
    }
    Ok(format!("{} lists, {} steps; {}", lists.len(), per * batches, report.join(", ")))
}
