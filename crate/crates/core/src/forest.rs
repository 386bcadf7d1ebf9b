//! Random-forest teacher.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::cart::{fit_tree_on_rows, CartTree, TreeParams};
use crate::data::Dataset;
use crate::rng::{derive_seed, stream};
use crate::{math, Error, Result};

/// Anything that labels feature vectors: the black box being distilled.
pub trait Teacher: Send + Sync {
    /// Number of features a query must have.
    fn n_features(&self) -> usize;

    /// Label for `x`. Callers guarantee `x.len() == n_features()`.
    fn label(&self, x: &[f64]) -> u8;
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    /// Features examined per split; `None` means `floor(sqrt(d))`.
    pub max_features: Option<usize>,
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self { n_trees: 100, max_depth: 8, max_features: None, bootstrap: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Forest {
    trees: Vec<CartTree>,
    n_trees: usize,
    max_depth: usize,
    feature_subsample: usize,
    seed: u64,
    n_features: usize,
}

const TREE_STREAM_TAG: u64 = 0x7472_6565; // "tree"

impl Forest {
    /// Assemble a forest from already-grown trees.
    pub fn from_trees(trees: Vec<CartTree>, n_features: usize, seed: u64) -> Result<Self> {
        if trees.is_empty() {
            return Err(Error::Config("a forest needs at least one tree".into()));
        }
        let max_depth = trees.iter().map(CartTree::depth).max().unwrap_or(0);
        Ok(Self { n_trees: trees.len(), trees, max_depth, feature_subsample: n_features, seed, n_features })
    }

    pub fn trees(&self) -> &[CartTree] {
        &self.trees
    }

    pub fn n_trees(&self) -> usize {
        self.n_trees
    }

    pub fn max_depth(&self) -> usize {
        self.max_depth
    }

    pub fn feature_subsample(&self) -> usize {
        self.feature_subsample
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    /// Majority vote of the trees; a tied vote returns 1.
    pub fn predict_label(&self, x: &[f64]) -> Result<u8> {
        if x.len() != self.n_features {
            return Err(Error::Shape { expected: self.n_features, got: x.len() });
        }
        Ok(self.vote(x))
    }

    /// Fraction of trees voting 1.
    pub fn vote_share(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features {
            return Err(Error::Shape { expected: self.n_features, got: x.len() });
        }
        let ones = self.trees.iter().filter(|t| t.predict_label(x) == 1).count();
        Ok(ones as f64 / self.trees.len() as f64)
    }

    #[inline]
    fn vote(&self, x: &[f64]) -> u8 {
        let ones = self.trees.iter().filter(|t| t.predict_label(x) == 1).count();
        u8::from(2 * ones >= self.trees.len())
    }

    /// Reorder trees (vote is order-free; exposed for testing that claim).
    pub fn with_tree_order(mut self, order: &[usize]) -> Result<Self> {
        let mut seen = alloc::vec![false; self.trees.len()];
        if order.len() != self.trees.len() || order.iter().any(|&i| i >= seen.len() || core::mem::replace(&mut seen[i], true)) {
            return Err(Error::Config("tree order must be a permutation".into()));
        }
        self.trees = order.iter().map(|&i| self.trees[i].clone()).collect();
        Ok(self)
    }
}

impl Teacher for Forest {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn label(&self, x: &[f64]) -> u8 {
        self.vote(x)
    }
}

/// Fit with default growth settings (bootstrap, `sqrt(d)` features per split).
pub fn fit_forest(data: &Dataset, n_trees: usize, max_depth: usize, seed: u64) -> Result<Forest> {
    fit_forest_with(data, &ForestParams { n_trees, max_depth, ..ForestParams::default() }, seed)
}

/// Tree `i` draws all its randomness from stream `i` under the forest seed,
/// so the fit is identical however trees are scheduled.
pub fn fit_forest_with(data: &Dataset, params: &ForestParams, seed: u64) -> Result<Forest> {
    if params.n_trees == 0 {
        return Err(Error::Config("n_trees must be positive".into()));
    }
    if params.max_depth == 0 {
        return Err(Error::Config("max_depth must be positive".into()));
    }
    if data.n_rows() < 2 {
        return Err(Error::Fit(format!("forest needs at least 2 rows, got {}", data.n_rows())));
    }
    if !data.has_both_labels() {
        return Err(Error::Fit("training data contains a single class".into()));
    }
    let d = data.n_cols();
    let mtry = params
        .max_features
        .unwrap_or_else(|| math::floor(math::sqrt(d as f64)) as usize)
        .clamp(1, d.max(1));
    let tree_seed = derive_seed(seed, TREE_STREAM_TAG);
    let n = data.n_rows();
    let tree_params = TreeParams { max_depth: params.max_depth, max_features: Some(mtry), require_decrease: false };
    let trees = crate::par_map(params.n_trees, |i| {
        let mut rng = stream(tree_seed, i as u64);
        let rows: Vec<u32> = if params.bootstrap {
            (0..n).map(|_| rng.random_range(0..n as u32)).collect()
        } else {
            (0..n as u32).collect()
        };
        fit_tree_on_rows(data, rows, tree_params, Some(&mut rng))
    });
    Ok(Forest {
        trees,
        n_trees: params.n_trees,
        max_depth: params.max_depth,
        feature_subsample: mtry,
        seed,
        n_features: d,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FeatureSchema;
    use alloc::vec;

    fn data(x: Vec<f64>, d: usize, y: Vec<u8>) -> Dataset {
        let names: Vec<alloc::string::String> = (0..d).map(|j| format!("x{j}")).collect();
        Dataset::new(x, y, FeatureSchema::continuous(&names)).unwrap()
    }

    #[test]
    fn separable_pair() {
        let d = data(vec![-1.0, 1.0], 1, vec![0, 1]);
        let params = ForestParams { n_trees: 1, max_depth: 1, max_features: None, bootstrap: false };
        let f = fit_forest_with(&d, &params, 3).unwrap();
        assert_eq!(f.predict_label(&[-1.0]).unwrap(), 0);
        assert_eq!(f.predict_label(&[1.0]).unwrap(), 1);
    }

    #[test]
    fn deterministic_for_seed() {
        let x: Vec<f64> = (0..200).map(|i| ((i * 37) % 101) as f64 / 10.0).collect();
        let y: Vec<u8> = (0..100).map(|i| u8::from(x[2 * i] + x[2 * i + 1] > 10.0)).collect();
        let d = data(x, 2, y);
        let a = fit_forest(&d, 15, 4, 11).unwrap();
        let b = fit_forest(&d, 15, 4, 11).unwrap();
        assert_eq!(a, b);
        for i in 0..50 {
            let p = [i as f64 / 5.0, 10.0 - i as f64 / 5.0];
            assert_eq!(a.predict_label(&p).unwrap(), b.predict_label(&p).unwrap());
        }
    }

    #[test]
    fn errors() {
        let d = data(vec![0.0, 1.0], 1, vec![0, 1]);
        assert!(matches!(fit_forest(&d, 0, 3, 1), Err(Error::Config(_))));
        let single = data(vec![0.0, 1.0], 1, vec![1, 1]);
        assert!(matches!(fit_forest(&single, 5, 3, 1), Err(Error::Fit(_))));
        let f = fit_forest(&d, 3, 2, 1).unwrap();
        assert!(matches!(f.predict_label(&[0.0, 1.0]), Err(Error::Shape { expected: 1, got: 2 })));
    }

    #[test]
    fn unbounded_single_tree_memorizes_distinct_rows() {
        let x: Vec<f64> = (0..90).map(|i| ((i * 7919) % 97) as f64).collect();
        let y: Vec<u8> = (0..30).map(|i| ((i * 13 + i / 3) % 2) as u8).collect();
        let d = data(x, 3, y);
        let params = ForestParams { n_trees: 1, max_depth: usize::MAX, max_features: None, bootstrap: false };
        let f = fit_forest_with(&d, &params, 0).unwrap();
        for (row, &label) in d.rows().zip(d.labels()) {
            assert_eq!(f.predict_label(row).unwrap(), label);
        }
    }

    #[test]
    fn split_vote_goes_to_one() {
        let ones = crate::cart::fit_cart(&data(vec![0.0, 1.0], 1, vec![1, 1]), 2);
        let zeros = crate::cart::fit_cart(&data(vec![0.0, 1.0], 1, vec![0, 0]), 2);
        let mut trees = vec![ones.clone(); 5];
        trees.extend(vec![zeros.clone(); 5]);
        let f = Forest::from_trees(trees, 1, 0).unwrap();
        assert_eq!(f.predict_label(&[0.3]).unwrap(), 1);
        let f = Forest::from_trees(vec![zeros.clone(), zeros, ones], 1, 0).unwrap();
        assert_eq!(f.predict_label(&[0.3]).unwrap(), 0);
    }

    #[test]
    fn tie_votes_one_and_order_is_irrelevant() {
        let x: Vec<f64> = (0..120).map(|i| ((i * 31) % 53) as f64).collect();
        let y: Vec<u8> = (0..60).map(|i| u8::from(x[2 * i] > 26.0)).collect();
        let d = data(x, 2, y);
        let f = fit_forest(&d, 10, 3, 5).unwrap();
        let rev: Vec<usize> = (0..10).rev().collect();
        let g = f.clone().with_tree_order(&rev).unwrap();
        for i in 0..60 {
            let p = [i as f64, (60 - i) as f64];
            assert_eq!(f.predict_label(&p).unwrap(), g.predict_label(&p).unwrap());
            let share = f.vote_share(&p).unwrap();
            if share == 0.5 {
                assert_eq!(f.predict_label(&p).unwrap(), 1);
            }
        }
    }
}
