//! CART classification trees.
//!
//! Splits minimize weighted Gini impurity over every (feature, midpoint)
//! pair. Impurities are compared as exact rationals, so ties are real ties
//! and resolve to the lower feature index, then the lower threshold.

use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt::Write;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::{ColumnKind, Dataset};
use crate::sampler::CorpusFactory;
use crate::student::{Candidate, CandidateFamily, Family, RoundContext, StructureKey, StudentModel};
use crate::{clamp_prob, Result};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        prob: f64,
        count: u32,
        positives: u32,
    },
}

/// A binary classification tree. Nodes are stored in preorder with the root
/// at index 0; rows with `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CartTree {
    nodes: Vec<Node>,
    depth: usize,
}

impl CartTree {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    /// Leaf reached by `x`.
    #[inline]
    pub fn leaf(&self, x: &[f64]) -> &Node {
        let mut i = 0usize;
        loop {
            match &self.nodes[i] {
                Node::Split { feature, threshold, left, right } => {
                    i = if x[*feature] <= *threshold { *left } else { *right } as usize;
                }
                leaf => return leaf,
            }
        }
    }

    /// Empirical label-1 frequency of the leaf reached by `x` (unclamped).
    #[inline]
    pub fn leaf_prob(&self, x: &[f64]) -> f64 {
        match self.leaf(x) {
            Node::Leaf { prob, .. } => *prob,
            Node::Split { .. } => unreachable!(),
        }
    }

    /// Majority label at the leaf, ties to 1.
    #[inline]
    pub fn predict_label(&self, x: &[f64]) -> u8 {
        match self.leaf(x) {
            Node::Leaf { count, positives, .. } => u8::from(2 * positives >= *count),
            Node::Split { .. } => unreachable!(),
        }
    }

    /// `(feature, threshold)` of the root split, if the tree is not a leaf.
    pub fn root_split(&self) -> Option<(usize, f64)> {
        match self.nodes.first()? {
            Node::Split { feature, threshold, .. } => Some((*feature, *threshold)),
            Node::Leaf { .. } => None,
        }
    }

    /// Preorder listing of split features with `L` at leaves, e.g. `[5, L, L]`.
    pub fn structure_key(&self) -> String {
        let mut s = String::from("[");
        for (i, n) in self.nodes.iter().enumerate() {
            if i > 0 {
                s.push_str(", ");
            }
            match n {
                Node::Split { feature, .. } => {
                    let _ = write!(s, "{feature}");
                }
                Node::Leaf { .. } => s.push('L'),
            }
        }
        s.push(']');
        s
    }
}

impl StudentModel for CartTree {
    fn predict_proba(&self, x: &[f64]) -> f64 {
        clamp_prob(self.leaf_prob(x))
    }
}

/// Preorder structure key of a tree.
pub fn cart_structure_key(tree: &CartTree) -> String {
    tree.structure_key()
}

/// Growth controls shared by student trees and forest members.
#[derive(Debug, Clone, Copy)]
pub struct TreeParams {
    pub max_depth: usize,
    /// Features examined per split; `None` examines all of them.
    pub max_features: Option<usize>,
    /// Split only when weighted impurity strictly decreases. When false an
    /// impure node is split whenever some split exists (needed to fit XOR-like
    /// patterns to purity).
    pub require_decrease: bool,
}

impl TreeParams {
    pub fn student(max_depth: usize) -> Self {
        Self { max_depth, max_features: None, require_decrease: true }
    }
}

/// Per-feature value bins: sorted distinct values and each row's bin index.
struct Binned {
    uniq: Vec<Vec<f64>>,
    bins: Vec<Vec<u32>>,
}

impl Binned {
    fn new(data: &Dataset) -> Self {
        let n = data.n_rows();
        let mut uniq = Vec::with_capacity(data.n_cols());
        let mut bins = Vec::with_capacity(data.n_cols());
        for (j, col) in data.schema().columns().iter().enumerate() {
            if col.kind != ColumnKind::Continuous {
                uniq.push(vec![0.0, 1.0]);
                bins.push(data.column(j).map(|v| u32::from(v != 0.0)).collect());
                continue;
            }
            let mut order: Vec<u32> = (0..n as u32).collect();
            order.sort_by(|&a, &b| {
                data.value(a as usize, j)
                    .partial_cmp(&data.value(b as usize, j))
                    .unwrap_or(Ordering::Equal)
            });
            let mut u = Vec::new();
            let mut b = vec![0u32; n];
            for &r in &order {
                let v = data.value(r as usize, j);
                if u.last() != Some(&v) {
                    u.push(v);
                }
                b[r as usize] = (u.len() - 1) as u32;
            }
            uniq.push(u);
            bins.push(b);
        }
        Self { uniq, bins }
    }
}

/// Weighted impurity score as an exact fraction `num / den` (proportional to
/// `m_left * gini_left + m_right * gini_right`, up to the constant 2).
#[derive(Clone, Copy, Debug)]
struct Score {
    num: u128,
    den: u128,
}

impl Score {
    fn node(k: u64, m: u64) -> Self {
        Self { num: (k * (m - k)) as u128, den: m as u128 }
    }

    fn split(kl: u64, ml: u64, kr: u64, mr: u64) -> Self {
        let a = (kl * (ml - kl)) as u128;
        let c = (kr * (mr - kr)) as u128;
        Self { num: a * mr as u128 + c * ml as u128, den: ml as u128 * mr as u128 }
    }

    fn cmp(&self, other: &Score) -> Ordering {
        (self.num * other.den).cmp(&(other.num * self.den))
    }
}

struct BestSplit {
    feature: usize,
    bin: u32,
    threshold: f64,
    score: Score,
}

struct Builder<'a, R> {
    binned: &'a Binned,
    labels: &'a [u8],
    params: TreeParams,
    rng: Option<&'a mut R>,
    nodes: Vec<Node>,
    depth: usize,
    hist: Vec<(u32, u32)>,
}

impl<R: Rng> Builder<'_, R> {
    fn grow(&mut self, rows: Vec<u32>, depth: usize) -> u32 {
        let id = self.nodes.len() as u32;
        let m = rows.len() as u64;
        let k = rows.iter().filter(|&&r| self.labels[r as usize] == 1).count() as u64;
        self.depth = self.depth.max(depth);
        let leaf = Node::Leaf {
            prob: if m == 0 { 0.5 } else { k as f64 / m as f64 },
            count: m as u32,
            positives: k as u32,
        };
        if depth >= self.params.max_depth || k == 0 || k == m {
            self.nodes.push(leaf);
            return id;
        }
        let Some(best) = self.best_split(&rows, k, m) else {
            self.nodes.push(leaf);
            return id;
        };
        self.nodes.push(Node::Split { feature: best.feature, threshold: best.threshold, left: 0, right: 0 });
        let bins = &self.binned.bins[best.feature];
        let (left_rows, right_rows): (Vec<u32>, Vec<u32>) =
            rows.into_iter().partition(|&r| bins[r as usize] <= best.bin);
        let l = self.grow(left_rows, depth + 1);
        let r = self.grow(right_rows, depth + 1);
        if let Node::Split { left, right, .. } = &mut self.nodes[id as usize] {
            *left = l;
            *right = r;
        }
        id
    }

    /// Feature visiting order. Without sampling every feature is examined in
    /// index order; with sampling the order is a random permutation and the
    /// search stops after `max_features` non-constant features (constant ones
    /// do not count, so an impure node with a usable feature always splits).
    fn feature_order(&mut self) -> (Vec<usize>, usize) {
        let d = self.binned.bins.len();
        let mut order: Vec<usize> = (0..d).collect();
        match (self.params.max_features, self.rng.as_deref_mut()) {
            (Some(mtry), Some(rng)) if mtry < d => {
                order.shuffle(rng);
                (order, mtry.max(1))
            }
            _ => (order, d),
        }
    }

    fn node_bins(&mut self, f: usize, rows: &[u32]) -> Vec<(u32, u32, u32)> {
        let uniq = &self.binned.uniq[f];
        let bins = &self.binned.bins[f];
        if rows.len() * 4 < uniq.len() {
            let mut pairs: Vec<(u32, u8)> =
                rows.iter().map(|&r| (bins[r as usize], self.labels[r as usize])).collect();
            pairs.sort_unstable_by_key(|p| p.0);
            let mut out: Vec<(u32, u32, u32)> = Vec::new();
            for (b, y) in pairs {
                match out.last_mut() {
                    Some(last) if last.0 == b => {
                        last.1 += 1;
                        last.2 += u32::from(y);
                    }
                    _ => out.push((b, 1, u32::from(y))),
                }
            }
            out
        } else {
            self.hist.clear();
            self.hist.resize(uniq.len(), (0, 0));
            for &r in rows {
                let h = &mut self.hist[bins[r as usize] as usize];
                h.0 += 1;
                h.1 += u32::from(self.labels[r as usize]);
            }
            self.hist
                .iter()
                .enumerate()
                .filter(|(_, h)| h.0 > 0)
                .map(|(b, h)| (b as u32, h.0, h.1))
                .collect()
        }
    }

    fn best_split(&mut self, rows: &[u32], k: u64, m: u64) -> Option<BestSplit> {
        let parent = Score::node(k, m);
        let mut best: Option<BestSplit> = None;
        let (order, budget) = self.feature_order();
        let mut examined = 0usize;
        for f in order {
            if examined == budget {
                break;
            }
            // (bin, count, positives) for bins present in the node, ascending
            let present = self.node_bins(f, rows);
            if present.len() < 2 {
                continue;
            }
            examined += 1;
            let uniq = &self.binned.uniq[f];
            let (mut ml, mut kl) = (0u64, 0u64);
            for w in present.windows(2) {
                ml += w[0].1 as u64;
                kl += w[0].2 as u64;
                let score = Score::split(kl, ml, k - kl, m - ml);
                let threshold = 0.5 * (uniq[w[0].0 as usize] + uniq[w[1].0 as usize]);
                let better = match &best {
                    None => true,
                    Some(b) => match score.cmp(&b.score) {
                        Ordering::Less => true,
                        Ordering::Greater => false,
                        Ordering::Equal => (f, threshold) < (b.feature, b.threshold),
                    },
                };
                if better {
                    best = Some(BestSplit { feature: f, bin: w[0].0, threshold, score });
                }
            }
        }
        let best = best?;
        if self.params.require_decrease && best.score.cmp(&parent) != Ordering::Less {
            return None;
        }
        Some(best)
    }
}

/// Grow a tree on `rows` of `data` (duplicates allowed, as in a bootstrap).
pub fn fit_tree_on_rows<R: Rng>(
    data: &Dataset,
    rows: Vec<u32>,
    params: TreeParams,
    rng: Option<&mut R>,
) -> CartTree {
    let binned = Binned::new(data);
    let mut b = Builder {
        binned: &binned,
        labels: data.labels(),
        params,
        rng,
        nodes: Vec::new(),
        depth: 0,
        hist: Vec::new(),
    };
    b.grow(rows, 0);
    CartTree { nodes: b.nodes, depth: b.depth }
}

/// Greedy CART fit on the whole corpus. A constant-label or empty corpus
/// yields a single leaf.
pub fn fit_cart(corpus: &Dataset, max_depth: usize) -> CartTree {
    let rows = (0..corpus.n_rows() as u32).collect();
    fit_tree_on_rows::<crate::rng::StreamRng>(corpus, rows, TreeParams::student(max_depth), None)
}

/// Monte-Carlo tree candidates: one tree per independent corpus.
#[derive(Debug, Clone, Copy)]
pub struct CartFamily {
    pub n_candidates: usize,
    pub max_depth: usize,
}

impl CandidateFamily for CartFamily {
    fn family(&self) -> Family {
        Family::Dt
    }

    fn complexity_cap(&self) -> usize {
        self.max_depth
    }

    fn generate(&self, ctx: &RoundContext<'_>, n: usize) -> Result<Vec<Candidate>> {
        cart_candidates(ctx.corpora, ctx.base_index, n, self.n_candidates, self.max_depth)
    }
}

/// `count` trees, tree `i` fit on corpus `base_index + i` of size `n`.
pub fn cart_candidates(
    corpora: &dyn CorpusFactory,
    base_index: u64,
    n: usize,
    count: usize,
    max_depth: usize,
) -> Result<Vec<Candidate>> {
    let fit_one = |i: usize| -> Result<Candidate> {
        let corpus = corpora.corpus(base_index + i as u64, n)?;
        let tree = fit_cart(&corpus, max_depth);
        let key = StructureKey::new(tree.structure_key());
        let complexity = tree.depth();
        Ok(Candidate::new(Arc::new(tree), key, complexity, Family::Dt))
    };
    crate::par_map(count, fit_one).into_iter().collect()
}

/// Gini impurity of a label multiset, `1 - sum p^2`.
pub fn gini(positives: usize, count: usize) -> f64 {
    if count == 0 {
        return 0.0;
    }
    let p = positives as f64 / count as f64;
    1.0 - p * p - (1.0 - p) * (1.0 - p)
}
