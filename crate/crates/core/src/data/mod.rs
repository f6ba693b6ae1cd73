//! Labelled feature datasets, deterministic batching and the synthetic
//! composition generator.

mod features;
pub mod synth;

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::space::{CompositionSpace, Pair, Split};

pub use features::{load_features, write_features, FeatureSidecar, FEATURE_MAGIC, FEATURE_VERSION};
pub use synth::{synth_generate, write_synth_dir, SynthConfig, SynthOutput};

/// One image representation (before normalisation) and its composition label.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f32>,
    pub label: Pair,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub split: Split,
    pub feature_dim: usize,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, split: Split, feature_dim: usize) -> Result<Self> {
        for (i, s) in samples.iter().enumerate() {
            if s.features.len() != feature_dim {
                return Err(Error::DimensionMismatch {
                    expected: feature_dim,
                    found: s.features.len(),
                });
            }
            if let Some(bad) = s.features.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    what: "feature",
                    context: format!("sample {i}, component {bad}"),
                });
            }
        }
        Ok(Dataset {
            samples,
            split,
            feature_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Check every label against the split's candidate set: seen pairs only
    /// for train, seen plus the split's unseen pairs otherwise.
    pub fn check_labels(&self, space: &CompositionSpace) -> Result<()> {
        let (candidates, n_seen) = space.candidates(self.split);
        let allowed: HashSet<Pair> = match self.split {
            Split::Train => candidates[..n_seen].iter().copied().collect(),
            _ => candidates.into_iter().collect(),
        };
        if let Some((index, s)) = self
            .samples
            .iter()
            .enumerate()
            .find(|(_, s)| !allowed.contains(&s.label))
        {
            return Err(Error::UnknownLabel {
                index,
                state: s.label.state,
                object: s.label.object,
            });
        }
        Ok(())
    }
}

/// Shuffle `0..n` with a generator keyed on `(seed, epoch)` and cut the
/// permutation into consecutive batches; the last batch may be short.
pub fn batch_iter(n: usize, batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Vec<usize>>> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn five_samples_in_batches_of_two() {
        let batches = batch_iter(5, 2, 3, 0).unwrap();
        let sizes: Vec<usize> = batches.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![2, 2, 1]);
        let mut all: Vec<usize> = batches.concat();
        all.sort_unstable();
        assert_eq!(all, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn batching_is_keyed_on_seed_and_epoch() {
        assert_eq!(batch_iter(50, 8, 9, 4).unwrap(), batch_iter(50, 8, 9, 4).unwrap());
        let mut e0 = batch_iter(50, 8, 9, 0).unwrap().concat();
        let mut e1 = batch_iter(50, 8, 9, 1).unwrap().concat();
        assert_ne!(e0, e1);
        e0.sort_unstable();
        e1.sort_unstable();
        assert_eq!(e0, e1);
    }

    #[test]
    fn empty_dataset_and_zero_batch_are_errors() {
        assert!(matches!(batch_iter(0, 4, 0, 0), Err(Error::EmptyDataset)));
        assert!(batch_iter(3, 0, 0, 0).is_err());
    }

    #[test]
    fn train_labels_must_be_seen() {
        let mut space = CompositionSpace::anonymous(2, 2, vec![Pair::new(0, 0)]);
        space.test_unseen_pairs = vec![Pair::new(1, 1)];
        let sample = |p| Sample {
            features: vec![1.0, 0.0],
            label: p,
        };
        let train = Dataset::new(vec![sample(Pair::new(1, 1))], Split::Train, 2).unwrap();
        assert!(matches!(train.check_labels(&space), Err(Error::UnknownLabel { .. })));
        let test = Dataset::new(
            vec![sample(Pair::new(1, 1)), sample(Pair::new(0, 0))],
            Split::Test,
            2,
        )
        .unwrap();
        test.check_labels(&space).unwrap();
        let val = Dataset::new(vec![sample(Pair::new(1, 1))], Split::Val, 2).unwrap();
        assert!(val.check_labels(&space).is_err());
    }

    proptest! {
        #[test]
        fn every_index_exactly_once(n in 1usize..300, bs in 1usize..40, seed in any::<u64>(), epoch in 0u64..50) {
            let batches = batch_iter(n, bs, seed, epoch).unwrap();
            prop_assert!(batches.iter().rev().skip(1).all(|b| b.len() == bs));
            let mut seen = vec![0u8; n];
            for i in batches.concat() {
                seen[i] += 1;
            }
            prop_assert!(seen.iter().all(|&c| c == 1));
        }
    }
}
