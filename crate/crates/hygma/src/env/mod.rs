//! Partially observed predator–prey gridworld.
//!
//! `n` predators pursue one prey on a square grid. Each step every predator
//! picks one of five moves (four directions plus stay; moves off the grid
//! become stay), the prey then moves per its policy, and any predator sharing
//! the prey's cell becomes captured — permanently. The team pays `-0.05` per
//! not-yet-captured predator per step, so shorter episodes score better. An
//! episode ends when every predator has been captured (success) or at the
//! step cap.
//!
//! Each predator sees a `(2*vision+1)²` patch around itself with three
//! channels — own position, other-predator count, prey — plus its own
//! normalized coordinates; cells beyond the grid read −1 in every channel.
//! [`global_state`] exposes the full normalized layout for centralized
//! critics and mixers. [`random_baseline`] measures mean episode length under
//! uniform-random play, the untrained reference all training checks compare
//! against.

use rand::Rng;
use thiserror::Error;

/// Per-step penalty charged for each predator that has not yet been captured.
pub const STEP_PENALTY: f64 = 0.05;

/// Size of the action set.
pub const N_ACTIONS: usize = 5;

/// Row/column deltas for actions `up, down, left, right, stay`.
const DELTAS: [(i64, i64); N_ACTIONS] = [(-1, 0), (1, 0), (0, -1), (0, 1), (0, 0)];

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid config: {0}")]
    BadConfig(String),
    #[error("expected {want} actions, got {got}")]
    ActionCount { got: usize, want: usize },
    #[error("agent {agent} chose action {action}, valid range is 0..{}", N_ACTIONS)]
    BadAction { agent: usize, action: usize },
    #[error("episode is already done")]
    EpisodeDone,
}

/// How the prey moves after the predators each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PreyPolicy {
    /// Prey never moves.
    Stationary,
    /// Prey picks one of the five moves uniformly at random (off-grid
    /// becomes stay, like predators).
    RandomMove,
}

#[derive(Debug, Clone)]
pub struct PPConfig {
    /// Side length of the square grid.
    pub grid: usize,
    pub n_predators: usize,
    /// Vision radius in cells; the patch is `(2*vision+1)²`.
    pub vision: usize,
    /// Episode step cap.
    pub max_steps: usize,
    pub prey_policy: PreyPolicy,
    /// Base seed for environment RNG streams.
    pub seed: u64,
}

impl Default for PPConfig {
    fn default() -> Self {
        Self {
            grid: 10,
            n_predators: 5,
            vision: 1,
            max_steps: 40,
            prey_policy: PreyPolicy::Stationary,
            seed: 0,
        }
    }
}

impl PPConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.grid < 3 {
            return Err(EnvError::BadConfig(format!("grid {} must be >= 3", self.grid)));
        }
        if self.n_predators < 1 {
            return Err(EnvError::BadConfig("need at least one predator".into()));
        }
        if self.max_steps < 1 {
            return Err(EnvError::BadConfig("max_steps must be >= 1".into()));
        }
        if self.n_predators + 1 > self.grid * self.grid {
            return Err(EnvError::BadConfig(format!(
                "{} predators plus prey cannot fit a {g}x{g} grid",
                self.n_predators,
                g = self.grid
            )));
        }
        Ok(())
    }

    /// Length of each predator's observation vector.
    pub fn obs_len(&self) -> usize {
        let side = 2 * self.vision + 1;
        3 * side * side + 2
    }

    /// Length of the global state vector.
    pub fn state_len(&self) -> usize {
        2 * (self.n_predators + 1) + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PPState {
    pub predators: Vec<(usize, usize)>,
    pub prey: (usize, usize),
    pub step: usize,
    pub captured: Vec<bool>,
}

impl PPState {
    pub fn all_captured(&self) -> bool {
        self.captured.iter().all(|&c| c)
    }

    pub fn done(&self, cfg: &PPConfig) -> bool {
        self.all_captured() || self.step >= cfg.max_steps
    }
}

/// Outcome of one environment transition.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub state: PPState,
    pub observations: Vec<Vec<f64>>,
    pub reward: f64,
    pub done: bool,
    /// True when the episode ended with every predator captured.
    pub success: bool,
}

/// Places predators and prey uniformly at random on distinct cells.
pub fn reset<R: Rng>(cfg: &PPConfig, rng: &mut R) -> (PPState, Vec<Vec<f64>>) {
    let cells = rand::seq::index::sample(rng, cfg.grid * cfg.grid, cfg.n_predators + 1);
    let pos = |flat: usize| (flat / cfg.grid, flat % cfg.grid);
    let predators: Vec<(usize, usize)> = (0..cfg.n_predators).map(|i| pos(cells.index(i))).collect();
    let prey = pos(cells.index(cfg.n_predators));
    let state =
        PPState { predators, prey, step: 0, captured: vec![false; cfg.n_predators] };
    let obs = observations(cfg, &state);
    (state, obs)
}

fn apply_move(grid: usize, pos: (usize, usize), action: usize) -> (usize, usize) {
    let (dr, dc) = DELTAS[action];
    let r = pos.0 as i64 + dr;
    let c = pos.1 as i64 + dc;
    if r < 0 || c < 0 || r >= grid as i64 || c >= grid as i64 {
        pos
    } else {
        (r as usize, c as usize)
    }
}

/// Advances the episode one step. Predators move simultaneously, the prey
/// moves after them, then captures are recorded and the team penalty charged
/// for every predator still free.
pub fn step<R: Rng>(
    cfg: &PPConfig,
    state: &PPState,
    actions: &[usize],
    rng: &mut R,
) -> Result<StepResult, EnvError> {
    if state.done(cfg) {
        return Err(EnvError::EpisodeDone);
    }
    if actions.len() != cfg.n_predators {
        return Err(EnvError::ActionCount { got: actions.len(), want: cfg.n_predators });
    }
    if let Some((agent, &action)) = actions.iter().enumerate().find(|(_, &a)| a >= N_ACTIONS) {
        return Err(EnvError::BadAction { agent, action });
    }
    let mut next = state.clone();
    for (pos, &action) in next.predators.iter_mut().zip(actions) {
        *pos = apply_move(cfg.grid, *pos, action);
    }
    if cfg.prey_policy == PreyPolicy::RandomMove {
        let a = rng.gen_range(0..N_ACTIONS);
        next.prey = apply_move(cfg.grid, next.prey, a);
    }
    for (i, &pos) in next.predators.iter().enumerate() {
        if pos == next.prey {
            next.captured[i] = true;
        }
    }
    next.step += 1;
    let free = next.captured.iter().filter(|&&c| !c).count();
    let reward = -STEP_PENALTY * free as f64;
    let success = next.all_captured();
    let done = success || next.step >= cfg.max_steps;
    let observations = observations(cfg, &next);
    Ok(StepResult { state: next, observations, reward, done, success })
}

/// Per-predator local views: three stacked `(2*vision+1)²` channel planes
/// (own position, other-predator count, prey) in row-major patch order,
/// followed by the predator's own normalized coordinates. Out-of-grid cells
/// read −1 in every channel.
pub fn observations(cfg: &PPConfig, state: &PPState) -> Vec<Vec<f64>> {
    let side = 2 * cfg.vision + 1;
    let cells = side * side;
    let denom = (cfg.grid - 1).max(1) as f64;
    (0..cfg.n_predators)
        .map(|i| {
            let (pr, pc) = state.predators[i];
            let mut obs = vec![0.0; 3 * cells + 2];
            for dr in 0..side {
                for dc in 0..side {
                    let patch_idx = dr * side + dc;
                    let r = pr as i64 + dr as i64 - cfg.vision as i64;
                    let c = pc as i64 + dc as i64 - cfg.vision as i64;
                    if r < 0 || c < 0 || r >= cfg.grid as i64 || c >= cfg.grid as i64 {
                        obs[patch_idx] = -1.0;
                        obs[cells + patch_idx] = -1.0;
                        obs[2 * cells + patch_idx] = -1.0;
                        continue;
                    }
                    let cell = (r as usize, c as usize);
                    if cell == state.predators[i] {
                        obs[patch_idx] = 1.0;
                    }
                    let others = state
                        .predators
                        .iter()
                        .enumerate()
                        .filter(|&(j, &p)| j != i && p == cell)
                        .count();
                    obs[cells + patch_idx] = others as f64;
                    if cell == state.prey {
                        obs[2 * cells + patch_idx] = 1.0;
                    }
                }
            }
            obs[3 * cells] = pr as f64 / denom;
            obs[3 * cells + 1] = pc as f64 / denom;
            obs
        })
        .collect()
}

/// Full layout for centralized learners: normalized predator coordinates in
/// identity order, then the prey's, then the episode progress fraction.
pub fn global_state(cfg: &PPConfig, state: &PPState) -> Vec<f64> {
    let denom = (cfg.grid - 1).max(1) as f64;
    let mut out = Vec::with_capacity(cfg.state_len());
    for &(r, c) in &state.predators {
        out.push(r as f64 / denom);
        out.push(c as f64 / denom);
    }
    out.push(state.prey.0 as f64 / denom);
    out.push(state.prey.1 as f64 / denom);
    out.push(state.step as f64 / cfg.max_steps as f64);
    out
}

/// Mean episode length under uniform-random play: the untrained reference.
pub fn random_baseline<R: Rng>(cfg: &PPConfig, episodes: usize, rng: &mut R) -> f64 {
    let mut total = 0usize;
    for _ in 0..episodes {
        let (mut state, _) = reset(cfg, rng);
        loop {
            let actions: Vec<usize> =
                (0..cfg.n_predators).map(|_| rng.gen_range(0..N_ACTIONS)).collect();
            let result = step(cfg, &state, &actions, rng).expect("stepped a live episode");
            state = result.state;
            if result.done {
                break;
            }
        }
        total += state.step;
    }
    total as f64 / episodes as f64
}
