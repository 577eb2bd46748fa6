//! Off-policy experience storage: a uniform-sampling ring buffer.

use crate::rng::Rng;

#[derive(Debug, Clone)]
pub struct Transition {
    pub state: Vec<f64>,
    /// Action at the level being trained (the latent of lower layers when
    /// the environment is an embedded one).
    pub action: Vec<f64>,
    /// Raw, unscaled reward; the learner applies reward_scale at update time.
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
}

#[derive(Debug)]
pub struct ReplayPool {
    capacity: usize,
    buf: Vec<Transition>,
    next: usize,
}

impl ReplayPool {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        ReplayPool {
            capacity,
            buf: Vec::new(),
            next: 0,
        }
    }

    pub fn push(&mut self, t: Transition) {
        debug_assert!(t.reward.is_finite());
        if self.buf.len() < self.capacity {
            self.buf.push(t);
        } else {
            self.buf[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.buf[i]
    }

    pub fn sample_indices(&self, batch: usize, rng: &mut Rng) -> Vec<usize> {
        (0..batch).map(|_| rng.index(self.buf.len())).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(r: f64) -> Transition {
        Transition {
            state: vec![0.0],
            action: vec![0.0],
            reward: r,
            next_state: vec![0.0],
            terminal: false,
        }
    }

    #[test]
    fn size_grows_then_saturates() {
        let mut pool = ReplayPool::new(5);
        for i in 0..12 {
            pool.push(t(i as f64));
            assert_eq!(pool.len(), (i + 1).min(5));
        }
        // Oldest entries were overwritten.
        let rewards: Vec<f64> = (0..5).map(|i| pool.get(i).reward).collect();
        assert!(rewards.iter().all(|&r| r >= 7.0));
    }

    #[test]
    fn uniform_sampling_chi_square() {
        // Chi-square over 50 bins at p > 0.01 (df=49, critical 74.92).
        let mut pool = ReplayPool::new(50);
        for i in 0..50 {
            pool.push(t(i as f64));
        }
        let mut counts = vec![0usize; 50];
        let mut rng = Rng::new(123);
        let draws = 100_000;
        for _ in 0..draws / 64 {
            for i in pool.sample_indices(64, &mut rng) {
                counts[i] += 1;
            }
        }
        let expected = (draws / 64 * 64) as f64 / 50.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        assert!(chi2 < 74.92, "chi-square {chi2} too large for uniformity");
    }
}
