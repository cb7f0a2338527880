//! Episode-granular experience storage for off-policy training.

use std::collections::VecDeque;

use rand_chacha::ChaCha8Rng;

use crate::spectral::Grouping;
use crate::tensor::Tensor;

/// One complete episode: `T` transitions plus the trailing observation and
/// global state, so any step can be bootstrapped from the stored data alone.
#[derive(Debug, Clone)]
pub struct EpisodeRecord {
    /// `T + 1` frames, each `[n_agents x obs_len]`.
    pub observations: Vec<Tensor>,
    /// `T + 1` global state vectors.
    pub states: Vec<Vec<f64>>,
    /// `T` joint actions.
    pub actions: Vec<Vec<usize>>,
    /// `T` team rewards.
    pub rewards: Vec<f64>,
    /// The agent grouping that was active (frozen) during this episode.
    pub grouping: Grouping,
}

impl EpisodeRecord {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Internal-consistency check used before storage.
    pub fn is_complete(&self) -> bool {
        let t = self.actions.len();
        t > 0
            && self.rewards.len() == t
            && self.observations.len() == t + 1
            && self.states.len() == t + 1
    }
}

/// Fixed-capacity ring of complete episodes; the oldest episode is evicted
/// when full.
#[derive(Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    episodes: VecDeque<EpisodeRecord>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { capacity, episodes: VecDeque::with_capacity(capacity) }
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    /// Stores a complete episode, evicting the oldest when at capacity.
    /// Incomplete records are rejected by panic: they indicate a logic bug
    /// in the collector, not a runtime condition.
    pub fn push(&mut self, episode: EpisodeRecord) {
        assert!(episode.is_complete(), "only complete episodes may be stored");
        if self.episodes.len() == self.capacity {
            self.episodes.pop_front();
        }
        self.episodes.push_back(episode);
    }

    /// Samples `batch` distinct episodes uniformly without replacement.
    /// `batch` must not exceed `len()`.
    pub fn sample(&self, batch: usize, rng: &mut ChaCha8Rng) -> Vec<&EpisodeRecord> {
        assert!(batch <= self.episodes.len(), "batch larger than buffer");
        rand::seq::index::sample(rng, self.episodes.len(), batch)
            .into_iter()
            .map(|i| &self.episodes[i])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;

    fn episode(tag: f64, steps: usize, n: usize) -> EpisodeRecord {
        let obs = (0..=steps)
            .map(|_| Tensor::from_vec(vec![tag; n * 2], &[n, 2]).unwrap())
            .collect();
        EpisodeRecord {
            observations: obs,
            states: vec![vec![tag]; steps + 1],
            actions: vec![vec![0; n]; steps],
            rewards: vec![-0.1; steps],
            grouping: Grouping::single_group(n),
        }
    }

    #[test]
    fn capacity_evicts_oldest() {
        let mut buf = ReplayBuffer::new(3);
        for i in 0..5 {
            buf.push(episode(i as f64, 4, 2));
        }
        assert_eq!(buf.len(), 3);
        let mut rng = seeded_rng(0);
        let all = buf.sample(3, &mut rng);
        let tags: Vec<f64> = all.iter().map(|e| e.states[0][0]).collect();
        for t in tags {
            assert!(t >= 2.0, "episode {t} should have been evicted");
        }
    }

    #[test]
    fn sampling_is_reproducible_and_distinct() {
        let mut buf = ReplayBuffer::new(16);
        for i in 0..10 {
            buf.push(episode(i as f64, 3, 2));
        }
        let pick = |seed: u64| -> Vec<f64> {
            let mut rng = seeded_rng(seed);
            buf.sample(4, &mut rng).iter().map(|e| e.states[0][0]).collect()
        };
        let a = pick(7);
        let b = pick(7);
        assert_eq!(a, b, "same seed must sample the same episodes");
        let mut sorted = a.clone();
        sorted.sort_by(f64::total_cmp);
        sorted.dedup();
        assert_eq!(sorted.len(), 4, "sampling is without replacement");
    }

    #[test]
    #[should_panic(expected = "complete")]
    fn incomplete_episodes_are_rejected() {
        let mut buf = ReplayBuffer::new(2);
        let mut ep = episode(0.0, 3, 2);
        ep.observations.pop(); // now T obs frames instead of T + 1
        buf.push(ep);
    }

    #[test]
    fn stored_episodes_keep_their_grouping() {
        let mut buf = ReplayBuffer::new(2);
        let mut ep = episode(1.0, 2, 4);
        ep.grouping =
            Grouping { labels: vec![0, 0, 1, 1], k: 2, cohesion: vec![0.9, 0.8], version: 3, eta_last: 0.1 };
        buf.push(ep);
        let mut rng = seeded_rng(1);
        let got = buf.sample(1, &mut rng);
        assert_eq!(got[0].grouping.k, 2);
        assert_eq!(got[0].grouping.labels, vec![0, 0, 1, 1]);
    }
}
