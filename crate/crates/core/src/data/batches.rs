use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::FeatureDataset;
use crate::error::{Error, Result};
use crate::rng::{Rng, RngState};

/// Shuffled minibatches of row indices.
///
/// Without cycling the stream is one pass: non-overlapping batches covering
/// every row once, the last one possibly short. With cycling the stream never
/// ends: when the permutation runs out it is reshuffled and the current batch
/// is filled from the new permutation, so every batch is full.
#[derive(Debug, Clone)]
pub struct BatchStream {
    batch_size: usize,
    cycling: bool,
    order: Vec<usize>,
    pos: usize,
    rng: Rng,
}

/// Checkpointable position of a [`BatchStream`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchStreamState {
    pub batch_size: usize,
    pub cycling: bool,
    pub order: Vec<usize>,
    pub pos: usize,
    pub rng: RngState,
}

impl BatchStream {
    pub fn new(n: usize, batch_size: usize, mut rng: Rng, cycling: bool) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be at least 1".into()));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        Ok(Self {
            batch_size,
            cycling,
            order,
            pos: 0,
            rng,
        })
    }

    pub fn for_dataset(
        dataset: &FeatureDataset,
        batch_size: usize,
        rng: Rng,
        cycling: bool,
    ) -> Result<Self> {
        Self::new(dataset.len(), batch_size, rng, cycling)
    }

    /// Reshuffles and starts a new pass.
    pub fn restart(&mut self) {
        self.order.shuffle(&mut self.rng);
        self.pos = 0;
    }

    /// Number of batches in one non-cycling pass.
    pub fn batches_per_pass(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }

    pub fn next_batch(&mut self) -> Option<Vec<usize>> {
        let n = self.order.len();
        if n == 0 {
            return None;
        }
        if !self.cycling {
            if self.pos >= n {
                return None;
            }
            let end = (self.pos + self.batch_size).min(n);
            let batch = self.order[self.pos..end].to_vec();
            self.pos = end;
            return Some(batch);
        }
        let mut batch = Vec::with_capacity(self.batch_size);
        while batch.len() < self.batch_size {
            if self.pos == n {
                self.restart();
            }
            let take = (self.batch_size - batch.len()).min(n - self.pos);
            batch.extend_from_slice(&self.order[self.pos..self.pos + take]);
            self.pos += take;
        }
        Some(batch)
    }

    pub fn state(&self) -> BatchStreamState {
        BatchStreamState {
            batch_size: self.batch_size,
            cycling: self.cycling,
            order: self.order.clone(),
            pos: self.pos,
            rng: self.rng.state(),
        }
    }

    pub fn from_state(state: BatchStreamState) -> Result<Self> {
        if state.batch_size == 0 || state.pos > state.order.len() {
            return Err(Error::Invariant(format!(
                "batch stream state: batch size {}, position {} of {}",
                state.batch_size,
                state.pos,
                state.order.len()
            )));
        }
        Ok(Self {
            batch_size: state.batch_size,
            cycling: state.cycling,
            order: state.order,
            pos: state.pos,
            rng: Rng::from_state(state.rng),
        })
    }
}

impl Iterator for BatchStream {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        self.next_batch()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use crate::rng::Rng;

    #[test]
    fn partition_with_short_last_batch() {
        let s = BatchStream::new(10, 3, Rng::new(0), false).unwrap();
        let batches: Vec<_> = s.collect();
        assert_eq!(batches.iter().map(Vec::len).collect::<Vec<_>>(), vec![3, 3, 3, 1]);
        let mut all: Vec<usize> = batches.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn cycling_counts_each_row_per_pass() {
        let mut s = BatchStream::new(4, 3, Rng::new(1), true).unwrap();
        let mut counts = [0; 4];
        for _ in 0..4 {
            let b = s.next_batch().unwrap();
            assert_eq!(b.len(), 3);
            for i in b {
                counts[i] += 1;
            }
        }
        assert_eq!(counts, [3, 3, 3, 3]);
    }

    #[test]
    fn same_seed_same_sequence() {
        let a: Vec<_> = BatchStream::new(50, 7, Rng::new(9), false).unwrap().collect();
        let b: Vec<_> = BatchStream::new(50, 7, Rng::new(9), false).unwrap().collect();
        assert_eq!(a, b);
        let c: Vec<_> = BatchStream::new(50, 7, Rng::new(10), false).unwrap().collect();
        assert_ne!(a, c);
    }

    #[test]
    fn restart_reshuffles() {
        let mut s = BatchStream::new(20, 20, Rng::new(2), false).unwrap();
        let first = s.next_batch().unwrap();
        assert!(s.next_batch().is_none());
        s.restart();
        let second = s.next_batch().unwrap();
        assert_ne!(first, second);
    }

    #[test]
    fn edge_cases() {
        assert!(BatchStream::new(5, 0, Rng::new(0), false).is_err());
        assert!(BatchStream::new(0, 3, Rng::new(0), true).unwrap().next_batch().is_none());
    }

    #[test]
    fn state_round_trip_resumes() {
        let mut a = BatchStream::new(11, 4, Rng::new(3), true).unwrap();
        a.next_batch();
        a.next_batch();
        let mut b = BatchStream::from_state(a.state()).unwrap();
        for _ in 0..10 {
            assert_eq!(a.next_batch(), b.next_batch());
        }
    }

    proptest! {
        #[test]
        fn every_pass_is_a_permutation(n in 1usize..200, bs in 1usize..40, seed in any::<u64>()) {
            let mut s = BatchStream::new(n, bs, Rng::new(seed), false).unwrap();
            for _ in 0..2 {
                let batches: Vec<_> = s.by_ref().collect();
                prop_assert_eq!(batches.len(), n.div_ceil(bs));
                let mut all = batches.concat();
                all.sort_unstable();
                prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
                s.restart();
            }
        }
    }
}
