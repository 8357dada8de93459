use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AdaptError, Strategy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceTag {
    Hist,
    Modern,
}

/// One epoch of batches; each entry is (index into its dataset, dataset).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixedBatchPlan {
    pub batches: Vec<Vec<(usize, SourceTag)>>,
}

impl MixedBatchPlan {
    pub fn count(&self, tag: SourceTag) -> usize {
        self.batches.iter().flatten().filter(|(_, t)| *t == tag).count()
    }

    pub fn len(&self) -> usize {
        self.batches.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }
}

/// Shuffles the dataset(s) selected by `strategy` and cuts them into
/// batches. `mixed` shuffles the tagged union globally, so one batch can
/// hold both sources; the tag ratio is whatever the inputs are.
pub fn plan_batches(
    n_hist: usize,
    n_modern: usize,
    strategy: Strategy,
    batch_size: usize,
    seed: u64,
) -> Result<MixedBatchPlan, AdaptError> {
    if batch_size == 0 {
        return Err(AdaptError::InvalidConfig("batch_size must be positive".into()));
    }
    let hist = || (0..n_hist).map(|i| (i, SourceTag::Hist));
    let modern = || (0..n_modern).map(|i| (i, SourceTag::Modern));
    let mut items: Vec<(usize, SourceTag)> = match strategy {
        Strategy::Hist => hist().collect(),
        Strategy::Modern => modern().collect(),
        Strategy::Mixed => hist().chain(modern()).collect(),
    };
    if matches!(strategy, Strategy::Hist | Strategy::Mixed) && n_hist == 0 {
        return Err(AdaptError::EmptyDataset("hist"));
    }
    if matches!(strategy, Strategy::Modern | Strategy::Mixed) && n_modern == 0 {
        return Err(AdaptError::EmptyDataset("modern"));
    }
    items.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(MixedBatchPlan {
        batches: items.chunks(batch_size).map(<[_]>::to_vec).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapt::Strategy;
    use proptest::prelude::*;

    fn sorted(plan: &MixedBatchPlan) -> Vec<(usize, SourceTag)> {
        let mut all: Vec<_> = plan.batches.iter().flatten().copied().collect();
        all.sort();
        all
    }

    #[test]
    fn mixed_partition() {
        let plan = plan_batches(8, 8, Strategy::Mixed, 8, 1).unwrap();
        assert_eq!(plan.batches.len(), 2);
        assert!(plan.batches.iter().all(|b| b.len() == 8));
        let expected: Vec<_> = (0..8)
            .map(|i| (i, SourceTag::Hist))
            .chain((0..8).map(|i| (i, SourceTag::Modern)))
            .collect();
        let mut expected = expected;
        expected.sort();
        assert_eq!(sorted(&plan), expected);
    }

    #[test]
    fn single_source_strategies_ignore_the_other_set() {
        let plan = plan_batches(5, 7, Strategy::Hist, 2, 0).unwrap();
        assert_eq!((plan.count(SourceTag::Hist), plan.count(SourceTag::Modern)), (5, 0));
        assert_eq!(plan.batches.last().unwrap().len(), 1);
        let plan = plan_batches(0, 7, Strategy::Modern, 3, 0).unwrap();
        assert_eq!((plan.count(SourceTag::Hist), plan.count(SourceTag::Modern)), (0, 7));
    }

    #[test]
    fn required_dataset_must_be_nonempty() {
        assert!(matches!(plan_batches(0, 5, Strategy::Hist, 8, 0), Err(AdaptError::EmptyDataset("hist"))));
        assert!(matches!(plan_batches(5, 0, Strategy::Modern, 8, 0), Err(AdaptError::EmptyDataset("modern"))));
        assert!(matches!(plan_batches(5, 0, Strategy::Mixed, 8, 0), Err(AdaptError::EmptyDataset("modern"))));
        assert!(plan_batches(5, 5, Strategy::Mixed, 0, 0).is_err());
    }

    #[test]
    fn every_mixed_plan_has_a_mixed_batch() {
        for seed in 0..1000 {
            let plan = plan_batches(40, 40, Strategy::Mixed, 8, seed).unwrap();
            let mixed = plan.batches.iter().any(|b| {
                b.iter().any(|(_, t)| *t == SourceTag::Hist) && b.iter().any(|(_, t)| *t == SourceTag::Modern)
            });
            assert!(mixed, "seed {seed}");
        }
    }

    proptest! {
        #[test]
        fn permutation_and_determinism(
            n_hist in 1usize..40,
            n_modern in 1usize..40,
            batch in 1usize..12,
            seed in any::<u64>(),
            strategy in prop_oneof![Just(Strategy::Hist), Just(Strategy::Modern), Just(Strategy::Mixed)],
        ) {
            let plan = plan_batches(n_hist, n_modern, strategy, batch, seed).unwrap();
            prop_assert_eq!(&plan, &plan_batches(n_hist, n_modern, strategy, batch, seed).unwrap());
            let mut expected = Vec::new();
            if strategy != Strategy::Modern {
                expected.extend((0..n_hist).map(|i| (i, SourceTag::Hist)));
            }
            if strategy != Strategy::Hist {
                expected.extend((0..n_modern).map(|i| (i, SourceTag::Modern)));
            }
            expected.sort();
            prop_assert_eq!(sorted(&plan), expected);
            prop_assert!(plan.batches.iter().all(|b| !b.is_empty() && b.len() <= batch));
        }
    }
}
