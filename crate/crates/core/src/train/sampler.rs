//! Fixed-order dataset cycling and per-dataset epoch permutations.

use rand::seq::SliceRandom;

use crate::data::rng::{stream_rng, Stream};

/// Dataset ids in the fixed order `0, 1, …, n−1, 0, 1, …`.
pub fn sample_order(datasets: usize) -> impl Iterator<Item = usize> {
    assert!(datasets > 0, "need at least one dataset");
    (0..datasets).cycle()
}

/// Serves batches from shuffled passes over a pool of sample indices.
///
/// A batch that runs past the end of an epoch takes the remainder of the
/// current permutation and continues with the next one, so every epoch
/// visits each sample exactly once.
#[derive(Clone, Debug)]
pub struct EpochSampler {
    pool: Vec<usize>,
    seed: u64,
    dataset: u64,
    epoch: u64,
    order: Vec<usize>,
    cursor: usize,
}

impl EpochSampler {
    pub fn new(pool: Vec<usize>, seed: u64, dataset: usize) -> Self {
        assert!(!pool.is_empty(), "cannot sample from an empty pool");
        let mut s = EpochSampler {
            pool,
            seed,
            dataset: dataset as u64,
            epoch: 0,
            order: Vec::new(),
            cursor: 0,
        };
        s.shuffle();
        s
    }

    fn shuffle(&mut self) {
        self.order = self.pool.clone();
        let mut rng = stream_rng(self.seed, Stream::Epoch, self.dataset, self.epoch);
        self.order.shuffle(&mut rng);
        self.cursor = 0;
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.cursor == self.order.len() {
                self.epoch += 1;
                self.shuffle();
            }
            let take = (size - out.len()).min(self.order.len() - self.cursor);
            out.extend_from_slice(&self.order[self.cursor..self.cursor + take]);
            self.cursor += take;
        }
        out
    }
}
