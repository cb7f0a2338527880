//! Cooperative multi-agent learners over group-aware embeddings.
//!
//! Both learning modes share the same representation path: per-agent
//! observations are encoded by a shared linear projection plus GRU
//! ([`AgentEncoder`]), then mixed along the current group hypergraph
//! ([`GroupConv`](crate::hypergraph::GroupConv)) into group-aware embeddings.
//!
//! - **Value mode**: a shared head maps `[encoder state ‖ group embedding]`
//!   to per-action utilities; chosen utilities are combined into a team value
//!   by a state-conditioned monotonic [`MixingNetwork`], trained by TD with
//!   target networks and (by default) double-Q action selection, on episodes
//!   sampled from a replay buffer.
//! - **Policy mode**: an actor head maps the same augmented features to
//!   action logits, with a centralized critic on `[global state ‖ mean group
//!   embedding]`, trained on-policy with one-step advantages.
//!
//! The optimized objective in both modes is the task loss plus a
//! group-consistency term ([`group_loss`]) pulling groupmates' embeddings
//! together while pushing groups apart, and an attention-entropy term
//! ([`att_entropy_loss`]) sharpening hyperedge attention
//! ([`total_loss`]).

mod loss;
mod model;
mod opt;
mod replay;
mod train;

pub use loss::{att_entropy_loss, group_loss, total_loss, GroupLossTerms};
pub use model::{AgentEncoder, BoundModel, MixingNetwork, Model, PolicyHeads, ValueHeads};
pub use opt::{Optimizer, OptimizerKind};
pub use replay::{EpisodeRecord, ReplayBuffer};
pub use train::{
    evaluate, train_run, AblationMode, EpisodeMetrics, EvalSummary, TimelineRow, TrainError,
    TrainOutput,
};

use rand::Rng;

use crate::tensor::Tensor;

/// Which learner optimizes the task loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LearnMode {
    Value,
    Policy,
}

/// Scalar weights of the joint objective and the Bellman terms.
#[derive(Debug, Clone)]
pub struct LossWeights {
    /// Group-consistency weight in the joint objective.
    pub lambda1: f64,
    /// Attention-entropy weight in the joint objective.
    pub lambda2: f64,
    /// Inter-group separation weight inside the group loss.
    pub beta: f64,
    /// Discount factor.
    pub gamma: f64,
    /// Critic weight in the policy-mode task loss.
    pub alpha_critic: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda1: 0.1, lambda2: 0.01, beta: 0.5, gamma: 0.99, alpha_critic: 0.5 }
    }
}

/// Dimensions of the model stack.
#[derive(Debug, Clone)]
pub struct ModelConfig {
    /// Encoder (projection + GRU) width.
    pub hidden: usize,
    /// Group-convolution output width.
    pub conv_out: usize,
    pub conv_layers: usize,
    pub heads: usize,
    pub att_dim: usize,
    /// Critic hidden width (policy mode).
    pub critic_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { hidden: 96, conv_out: 64, conv_layers: 1, heads: 4, att_dim: 32, critic_hidden: 64 }
    }
}

/// Training-loop knobs.
#[derive(Debug, Clone)]
pub struct LearnConfig {
    pub mode: LearnMode,
    pub episodes: usize,
    pub lr: f64,
    pub weights: LossWeights,
    /// `None` follows the mode convention: adaptive-RMS for value mode,
    /// Adam for policy mode.
    pub optimizer: Option<OptimizerKind>,
    /// Episodes per value-mode update batch.
    pub batch_episodes: usize,
    /// Environment steps collected per policy-mode update.
    pub batch_steps: usize,
    /// Replay capacity in episodes (value mode).
    pub replay_capacity: usize,
    /// Target-network sync period in optimization steps (value mode).
    pub target_sync: usize,
    pub double_q: bool,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Environment steps over which exploration anneals linearly.
    pub eps_anneal_steps: usize,
    /// Global gradient-norm clip.
    pub grad_clip: f64,
    /// Episodes used by evaluation rollouts.
    pub eval_episodes: usize,
    /// Standardize advantages per policy batch (zero mean, unit variance)
    /// before they scale the actor term. The raw rewards are only hundredths
    /// per step, so without this the actor signal is dwarfed by shared logit
    /// drift; the critic always regresses the unscaled targets.
    pub advantage_norm: bool,
    /// Optimization passes over each collected policy batch. Every pass
    /// re-evaluates the joint loss at the current parameters (advantages
    /// included), so the critic gets several regression steps per batch of
    /// on-policy data instead of one; the actor drift per batch stays small.
    pub opt_epochs: usize,
}

impl Default for LearnConfig {
    fn default() -> Self {
        Self {
            mode: LearnMode::Policy,
            episodes: 1500,
            lr: 0.001,
            weights: LossWeights::default(),
            optimizer: None,
            batch_episodes: 32,
            batch_steps: 500,
            replay_capacity: 500,
            target_sync: 200,
            double_q: true,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_anneal_steps: 5000,
            grad_clip: 10.0,
            eval_episodes: 100,
            advantage_norm: true,
            opt_epochs: 4,
        }
    }
}

impl LearnConfig {
    pub fn optimizer_kind(&self) -> OptimizerKind {
        self.optimizer.unwrap_or(match self.mode {
            LearnMode::Value => OptimizerKind::RmsProp,
            LearnMode::Policy => OptimizerKind::Adam,
        })
    }

    /// Exploration rate after `steps` environment steps: linear from
    /// `eps_start` to `eps_end`.
    pub fn epsilon(&self, steps: usize) -> f64 {
        if self.eps_anneal_steps == 0 {
            return self.eps_end;
        }
        let frac = (steps as f64 / self.eps_anneal_steps as f64).min(1.0);
        self.eps_start + (self.eps_end - self.eps_start) * frac
    }
}

/// Picks one action per agent from a value or probability row.
///
/// Value mode: with probability `epsilon` a uniform action, otherwise the
/// argmax with ties broken toward the lowest index. Policy mode: a sample
/// from each row as a categorical distribution (`epsilon` is ignored).
pub fn select_actions<R: Rng>(
    rows: &Tensor,
    mode: LearnMode,
    epsilon: f64,
    rng: &mut R,
) -> Vec<usize> {
    let (n, a) = (rows.rows(), rows.cols());
    (0..n)
        .map(|i| {
            let row = rows.row(i);
            match mode {
                LearnMode::Value => {
                    if rng.gen::<f64>() < epsilon {
                        rng.gen_range(0..a)
                    } else {
                        argmax_lowest(row)
                    }
                }
                LearnMode::Policy => {
                    let draw: f64 = rng.gen();
                    let mut acc = 0.0;
                    let mut choice = a - 1;
                    for (j, &p) in row.iter().enumerate() {
                        acc += p;
                        if draw < acc {
                            choice = j;
                            break;
                        }
                    }
                    choice
                }
            }
        })
        .collect()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax_lowest(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}
