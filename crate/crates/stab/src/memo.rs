//! Label cache for teachers queried on binary feature vectors.
//!
//! On an all-binary schema with at most 64 columns a feature vector is a
//! bitmask, and corpora revisit the same few thousand masks constantly, so
//! each forest vote is computed once.

use std::collections::HashMap;
use std::sync::RwLock;

use distill_core::data::FeatureSchema;
use distill_core::forest::Teacher;

pub struct MemoTeacher<T> {
    inner: T,
    cache: Option<RwLock<HashMap<u64, u8>>>,
}

impl<T: Teacher> MemoTeacher<T> {
    /// Caches only when every column of `schema` is binary-valued.
    pub fn new(inner: T, schema: &FeatureSchema) -> Self {
        let cacheable = schema.all_binary() && schema.len() <= 64 && schema.len() == inner.n_features();
        Self { inner, cache: cacheable.then(|| RwLock::new(HashMap::new())) }
    }

    pub fn inner(&self) -> &T {
        &self.inner
    }

    /// Distinct vectors labelled so far (0 when caching is off).
    pub fn cached(&self) -> usize {
        self.cache.as_ref().map_or(0, |c| c.read().expect("label cache poisoned").len())
    }
}

fn mask(x: &[f64]) -> Option<u64> {
    let mut m = 0u64;
    for (j, &v) in x.iter().enumerate() {
        if v == 1.0 {
            m |= 1 << j;
        } else if v != 0.0 {
            return None;
        }
    }
    Some(m)
}

impl<T: Teacher> Teacher for MemoTeacher<T> {
    fn n_features(&self) -> usize {
        self.inner.n_features()
    }

    fn label(&self, x: &[f64]) -> u8 {
        let (Some(cache), Some(m)) = (&self.cache, mask(x)) else {
            return self.inner.label(x);
        };
        if let Some(&y) = cache.read().expect("label cache poisoned").get(&m) {
            return y;
        }
        let y = self.inner.label(x);
        cache.write().expect("label cache poisoned").insert(m, y);
        y
    }
}
