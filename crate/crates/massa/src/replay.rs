//! FIFO ring replay buffer with uniform with-replacement sampling.

use rand::Rng;

use crate::embedding::UserState;
use crate::error::{Error, Result};

/// One stored interaction: state, every agent's action, every agent's
/// reward, next state.
#[derive(Debug, Clone)]
pub struct Transition {
    pub state: UserState,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub next_state: UserState,
}

/// Ring buffer; at capacity the oldest entry is evicted first.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    entries: Vec<Transition>,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "capacity must be positive");
        Self {
            capacity,
            entries: Vec::new(),
            cursor: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.entries.len() < self.capacity {
            self.entries.push(t);
        } else {
            self.entries[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.entries[i]
    }

    /// Uniform sample with replacement. Errors until the buffer holds at
    /// least `batch_size` transitions.
    pub fn sample_indices(&self, batch_size: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
        if self.entries.len() < batch_size {
            return Err(Error::BufferNotReady {
                have: self.entries.len(),
                need: batch_size,
            });
        }
        Ok((0..batch_size)
            .map(|_| rng.random_range(0..self.entries.len()))
            .collect())
    }

    pub fn sample<'a>(
        &'a self,
        batch_size: usize,
        rng: &mut impl Rng,
    ) -> Result<Vec<&'a Transition>> {
        Ok(self
            .sample_indices(batch_size, rng)?
            .into_iter()
            .map(|i| &self.entries[i])
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::HistoryRecord;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(tag: usize) -> Transition {
        Transition {
            state: UserState {
                static_ids: vec![tag],
                history: vec![HistoryRecord::PADDING],
            },
            actions: vec![vec![tag as f64]],
            rewards: vec![0.0],
            next_state: UserState {
                static_ids: vec![tag],
                history: vec![HistoryRecord::PADDING],
            },
        }
    }

    #[test]
    fn fifo_eviction_at_capacity() {
        let mut buf = ReplayBuffer::new(2);
        buf.push(t(1));
        buf.push(t(2));
        buf.push(t(3));
        assert_eq!(buf.len(), 2);
        let tags: Vec<usize> = (0..2).map(|i| buf.get(i).state.static_ids[0]).collect();
        assert!(tags.contains(&2) && tags.contains(&3), "{tags:?}");
    }

    #[test]
    fn sequence_number_audit_of_fifo_order() {
        // Push 25 numbered transitions through a capacity-10 ring; the
        // survivors must be exactly the last 10 in order of eviction age.
        let mut buf = ReplayBuffer::new(10);
        for i in 0..25 {
            buf.push(t(i));
        }
        let mut survivors: Vec<usize> = (0..buf.len()).map(|i| buf.get(i).state.static_ids[0]).collect();
        survivors.sort_unstable();
        assert_eq!(survivors, (15..25).collect::<Vec<_>>());
        assert!(buf.len() <= buf.capacity());
    }

    #[test]
    fn sampling_is_deterministic_under_seed() {
        let mut buf = ReplayBuffer::new(16);
        for i in 0..16 {
            buf.push(t(i));
        }
        let a = buf
            .sample_indices(8, &mut ChaCha8Rng::seed_from_u64(5))
            .unwrap();
        let b = buf
            .sample_indices(8, &mut ChaCha8Rng::seed_from_u64(5))
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn underfilled_buffer_is_not_ready() {
        let mut buf = ReplayBuffer::new(8);
        buf.push(t(0));
        let err = buf
            .sample_indices(4, &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap_err();
        assert!(matches!(err, Error::BufferNotReady { have: 1, need: 4 }));
    }

    #[test]
    fn sampling_is_roughly_uniform() {
        // Chi-square over 1e5 draws from a 10-element buffer, p > 0.001.
        let mut buf = ReplayBuffer::new(10);
        for i in 0..10 {
            buf.push(t(i));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let n = 100_000;
        let mut counts = [0.0f64; 10];
        for _ in 0..n / 10 {
            for idx in buf.sample_indices(10, &mut rng).unwrap() {
                counts[idx] += 1.0;
            }
        }
        let expected = n as f64 / 10.0;
        let chi2: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
        // 0.999 quantile of chi-square with 9 degrees of freedom.
        assert!(chi2 < 27.877, "chi2 = {chi2}");
    }
}
