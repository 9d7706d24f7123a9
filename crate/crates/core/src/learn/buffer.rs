//! Replay storage and the dual online/offline batch draw.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::LearnError;

/// Transition in learner coordinates (feature vectors, normalised action).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub obs: Vec<f64>,
    pub act: Vec<f64>,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub done: bool,
}

/// Fixed-capacity ring with FIFO eviction.
#[derive(Debug, Clone, Default)]
pub struct ReplayBuffer {
    items: Vec<Sample>,
    capacity: usize,
    head: usize,
    read_only: bool,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { items: Vec::new(), capacity, head: 0, read_only: false }
    }

    /// Buffer holding `samples` that rejects further pushes.
    pub fn read_only(samples: Vec<Sample>) -> Self {
        let capacity = samples.len().max(1);
        Self { items: samples, capacity, head: 0, read_only: true }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn is_read_only(&self) -> bool {
        self.read_only
    }

    pub fn push(&mut self, s: Sample) -> Result<(), LearnError> {
        if self.read_only {
            return Err(LearnError::InvalidConfig("push into a read-only demonstration buffer".into()));
        }
        if self.items.len() < self.capacity {
            self.items.push(s);
        } else {
            self.items[self.head] = s;
            self.head = (self.head + 1) % self.capacity;
        }
        Ok(())
    }

    /// Items from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Sample> {
        let (newer, older) = self.items.split_at(if self.items.len() < self.capacity { 0 } else { self.head });
        older.iter().chain(newer.iter())
    }

    pub fn get(&self, i: usize) -> &Sample {
        &self.items[i]
    }

    pub fn sample_one<R: Rng>(&self, rng: &mut R) -> &Sample {
        &self.items[rng.gen_range(0..self.items.len())]
    }
}

/// Most online samples a batch may take.
pub const ONLINE_CAP: usize = 1_000_000;

/// `(online, offline)` sample counts of a batch of `n`.
pub fn split_counts(n: usize, lambda_demo: f64, online_len: usize, offline_len: usize) -> (usize, usize) {
    match (online_len, offline_len) {
        (0, _) => (0, n),
        (_, 0) => (n, 0),
        _ => {
            let n_o = ((n as f64 / lambda_demo).floor() as usize).min(ONLINE_CAP).min(n);
            (n_o, n - n_o)
        }
    }
}

#[derive(Debug)]
pub struct DualBatch<'a> {
    pub samples: Vec<&'a Sample>,
    pub online: usize,
    pub offline: usize,
}

/// Uniform draw with replacement: `N_o = min(⌊N/λ⌋, 10⁶)` online and the
/// rest offline, falling back to whichever buffer is non-empty.
pub fn sample_dual_batch<'a, R: Rng>(
    online: &'a ReplayBuffer,
    offline: &'a ReplayBuffer,
    n: usize,
    lambda_demo: f64,
    rng: &mut R,
) -> Result<DualBatch<'a>, LearnError> {
    if online.is_empty() && offline.is_empty() {
        return Err(LearnError::NoData);
    }
    let (n_on, n_off) = split_counts(n, lambda_demo, online.len(), offline.len());
    let mut samples = Vec::with_capacity(n);
    samples.extend((0..n_on).map(|_| online.sample_one(rng)));
    samples.extend((0..n_off).map(|_| offline.sample_one(rng)));
    Ok(DualBatch { samples, online: n_on, offline: n_off })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(r: f64) -> Sample {
        Sample { obs: vec![r], act: vec![0.0], reward: r, next_obs: vec![r], done: false }
    }

    #[test]
    fn ring_evicts_oldest() {
        let mut b = ReplayBuffer::new(3);
        for i in 0..5 {
            b.push(s(i as f64)).unwrap();
        }
        assert_eq!(b.len(), 3);
        let order: Vec<f64> = b.iter().map(|x| x.reward).collect();
        assert_eq!(order, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn read_only_rejects_push() {
        let mut b = ReplayBuffer::read_only(vec![s(1.0)]);
        assert!(b.push(s(2.0)).is_err());
    }

    #[test]
    fn split_examples() {
        assert_eq!(split_counts(256, 4.0, 10, 10), (64, 192));
        assert_eq!(split_counts(300, 7.0, 10, 10), (42, 258));
        assert_eq!(split_counts(10_000_000, 2.0, 10, 10).0, ONLINE_CAP);
        assert_eq!(split_counts(256, 4.0, 0, 10), (0, 256));
        assert_eq!(split_counts(256, 4.0, 10, 0), (256, 0));
    }

    #[test]
    fn empty_buffers_fault() {
        let mut rng = rand::thread_rng();
        let a = ReplayBuffer::new(4);
        let b = ReplayBuffer::new(4);
        assert!(matches!(sample_dual_batch(&a, &b, 8, 4.0, &mut rng), Err(LearnError::NoData)));
    }
}
