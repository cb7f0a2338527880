//! Cooperative multi-agent reinforcement learning with dynamic agent grouping.
//!
//! The library discovers coordination structure among agents while they train:
//! recent per-agent trajectories are clustered spectrally, each cluster becomes
//! a hyperedge of an agent hypergraph, and an attention-weighted hypergraph
//! convolution mixes information within (and only within) groups. The resulting
//! group-aware embeddings feed either a value-based learner with monotonic
//! value mixing or an on-policy actor-critic learner.
//!
//! Module layout:
//!
//! * [`tensor`] — dense `f64` tensors and a reverse-mode gradient tape; every
//!   learnable quantity in the crate lives here.
//! * [`spectral`] — trajectory windows, similarity graphs, a Jacobi
//!   eigensolver, k-means with silhouette-based cluster-count selection, and
//!   the hysteresis rule that decides when a new grouping is adopted.
//! * [`hypergraph`] — incidence structures built from groupings plus the
//!   attention-weighted hypergraph convolution (and a plain graph-convolution
//!   ablation variant).
//! * [`learn`] — recurrent agent encoders, value heads with monotonic mixing,
//!   policy heads with a centralized critic, auxiliary losses, replay, and the
//!   training loop.
//! * [`env`] — a predator-prey gridworld with partial observability.
//! * [`cli`] — config parsing, train/eval/ablation/complexity entry points,
//!   CSV metrics and binary checkpoints.

pub mod cli;
pub mod env;
pub mod hypergraph;
pub mod learn;
pub mod spectral;
pub mod tensor;

/// Deterministic RNG used throughout: one seed, reproducible streams.
pub fn seeded_rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
pub(crate) fn test_rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    seeded_rng(seed)
}
