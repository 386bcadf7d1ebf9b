//! Candidate students, equivalence classes and representative selection.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use crate::data::Dataset;
use crate::sampler::CorpusFactory;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Family {
    Dt,
    Frl,
    Sr,
    Other,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Dt => "DT",
            Family::Frl => "FRL",
            Family::Sr => "SR",
            Family::Other => "other",
        })
    }
}

/// Canonical, human-readable name of a student structure.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StructureKey(String);

impl StructureKey {
    pub fn new(key: impl Into<String>) -> Self {
        Self(key.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for StructureKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A fitted student: maps a feature vector to `P(label = 1)`.
pub trait StudentModel: Send + Sync + fmt::Debug {
    fn predict_proba(&self, x: &[f64]) -> f64;
}

#[derive(Debug, Clone)]
pub struct Candidate {
    pub model: Arc<dyn StudentModel>,
    pub key: StructureKey,
    pub complexity: usize,
    pub family: Family,
}

impl Candidate {
    pub fn new(model: Arc<dyn StudentModel>, key: StructureKey, complexity: usize, family: Family) -> Self {
        Self { model, key, complexity, family }
    }

    /// Mean of `loss(label, prob)` over the corpus.
    pub fn mean_loss(&self, corpus: &Dataset, loss: fn(u8, f64) -> f64) -> f64 {
        let total: f64 = corpus
            .rows()
            .zip(corpus.labels())
            .map(|(x, &y)| loss(y, self.model.predict_proba(x)))
            .sum();
        total / corpus.n_rows() as f64
    }
}

#[derive(Debug, Clone)]
pub struct EquivalenceClass {
    pub key: StructureKey,
    pub family: Family,
    /// Members in generation order.
    pub members: Vec<Candidate>,
    representative: usize,
    representative_loss: Option<f64>,
}

impl EquivalenceClass {
    /// The selected representative; the first member until
    /// [`select_representatives`] has run.
    pub fn representative(&self) -> &Candidate {
        &self.members[self.representative]
    }

    pub fn representative_index(&self) -> usize {
        self.representative
    }

    /// Mean loss of the representative on the corpus it was selected with.
    pub fn representative_loss(&self) -> Option<f64> {
        self.representative_loss
    }
}

/// Group candidates by `(family, key)`. Classes come out in key order;
/// members keep generation order.
pub fn partition(candidates: Vec<Candidate>) -> Vec<EquivalenceClass> {
    let mut map: BTreeMap<(Family, StructureKey), Vec<Candidate>> = BTreeMap::new();
    for c in candidates {
        map.entry((c.family, c.key.clone())).or_default().push(c);
    }
    let mut classes: Vec<EquivalenceClass> = map
        .into_iter()
        .map(|((family, key), members)| EquivalenceClass {
            key,
            family,
            members,
            representative: 0,
            representative_loss: None,
        })
        .collect();
    classes.sort_by(|a, b| a.key.cmp(&b.key).then(a.family.cmp(&b.family)));
    classes
}

/// Pick each class's loss-minimal member on `eval`. Ties go to the earliest
/// member; non-finite losses never win. Members sharing one model allocation
/// are evaluated once.
pub fn select_representatives(
    mut classes: Vec<EquivalenceClass>,
    eval: &Dataset,
    loss: fn(u8, f64) -> f64,
) -> Result<Vec<EquivalenceClass>> {
    if eval.n_rows() == 0 {
        return Err(Error::Evaluation("evaluation corpus is empty".into()));
    }
    let results = crate::par_map(classes.len(), |ci| {
        let class = &classes[ci];
        let mut memo: BTreeMap<usize, f64> = BTreeMap::new();
        let mut best: Option<(usize, f64)> = None;
        for (i, m) in class.members.iter().enumerate() {
            let ptr = Arc::as_ptr(&m.model) as *const () as usize;
            let l = *memo.entry(ptr).or_insert_with(|| m.mean_loss(eval, loss));
            if !l.is_finite() {
                continue;
            }
            if best.map_or(true, |(_, b)| l < b) {
                best = Some((i, l));
            }
        }
        best
    });
    for (class, best) in classes.iter_mut().zip(results) {
        let (i, l) = best.ok_or_else(|| {
            Error::Evaluation(format!("every member of class {} has a non-finite loss", class.key))
        })?;
        class.representative = i;
        class.representative_loss = Some(l);
    }
    Ok(classes)
}

/// What a candidate generator gets to see in one round.
pub struct RoundContext<'a> {
    pub corpora: &'a dyn CorpusFactory,
    /// First corpus index reserved for this round's candidates.
    pub base_index: u64,
    pub round: u32,
    /// Seed for any randomness the family needs beyond its corpora.
    pub seed: u64,
}

/// A student family able to produce a round's candidates at corpus size `n`.
pub trait CandidateFamily: Sync {
    fn family(&self) -> Family;

    /// Complexity cap `C` (tree depth, list length, formula depth).
    fn complexity_cap(&self) -> usize;

    fn generate(&self, ctx: &RoundContext<'_>, n: usize) -> Result<Vec<Candidate>>;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FeatureSchema;
    use alloc::vec;

    #[derive(Debug)]
    struct Const(f64);

    impl StudentModel for Const {
        fn predict_proba(&self, _x: &[f64]) -> f64 {
            self.0
        }
    }

    fn cand(key: &str, p: f64) -> Candidate {
        Candidate::new(Arc::new(Const(p)), StructureKey::new(key), 1, Family::Other)
    }

    fn sq(y: u8, p: f64) -> f64 {
        (y as f64 - p) * (y as f64 - p)
    }

    fn eval() -> Dataset {
        Dataset::new(vec![0.0, 0.0], vec![1, 1], FeatureSchema::continuous(&["x"])).unwrap()
    }

    #[test]
    fn partition_counts() {
        let classes = partition(vec![cand("A", 0.1), cand("B", 0.1), cand("A", 0.1), cand("C", 0.1)]);
        let keys: Vec<&str> = classes.iter().map(|c| c.key.as_str()).collect();
        assert_eq!(keys, ["A", "B", "C"]);
        assert_eq!(classes[0].members.len(), 2);
        let same = partition(vec![cand("K", 0.1); 5]);
        assert_eq!(same.len(), 1);
    }

    #[test]
    fn representative_is_loss_argmin_with_earliest_tie() {
        // loss = (1 - p)^2
        let classes = partition(vec![cand("A", 1.0 - 0.3f64.sqrt()), cand("A", 1.0 - 0.2f64.sqrt())]);
        let classes = select_representatives(classes, &eval(), sq).unwrap();
        assert_eq!(classes[0].representative_index(), 1);

        let classes = partition(vec![cand("A", 0.5), cand("A", 0.5), cand("B", 0.9)]);
        let classes = select_representatives(classes, &eval(), sq).unwrap();
        assert_eq!(classes[0].representative_index(), 0);
        assert_eq!(classes[1].representative_index(), 0);
        assert!((classes[1].representative_loss().unwrap() - 0.01).abs() < 1e-12);
    }

    #[test]
    fn all_non_finite_is_an_error() {
        let classes = partition(vec![cand("A", f64::NAN)]);
        let err = select_representatives(classes, &eval(), sq).unwrap_err();
        assert!(matches!(err, Error::Evaluation(msg) if msg.contains('A')));
    }

    #[test]
    fn families_never_share_a_class() {
        let mut a = cand("[L]", 0.5);
        a.family = Family::Dt;
        let b = cand("[L]", 0.5);
        assert_eq!(partition(vec![a, b]).len(), 2);
    }
}
