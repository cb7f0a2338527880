//! End-to-end training and evaluation loops.

use log::{debug, info};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::env::{self, EnvError, PPConfig};
use crate::hypergraph::{build_hypergraph, message_count, ConvVariant, Hypergraph};
use crate::spectral::{
    cluster, eta, maybe_update, Grouping, SpectralConfig, SpectralError, StateHistoryWindow,
};
use crate::tensor::{ParamSet, Tape, Tensor, TensorError, Var};

use super::{
    argmax_lowest, att_entropy_loss, group_loss, select_actions, total_loss, EpisodeRecord,
    LearnConfig, LearnMode, Model, ModelConfig, Optimizer, ReplayBuffer,
};

/// Which structural variant a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationMode {
    /// Dynamic grouping with hyperedge attention convolution.
    Hypergraph,
    /// Dynamic grouping with plain graph convolution over group cliques.
    CliqueGraph,
    /// All agents in one fixed group for the whole run.
    SingleGroup,
}

impl AblationMode {
    pub fn conv_variant(self) -> ConvVariant {
        match self {
            AblationMode::Hypergraph | AblationMode::SingleGroup => ConvVariant::Attention,
            AblationMode::CliqueGraph => ConvVariant::Clique,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            AblationMode::Hypergraph => "hgcn",
            AblationMode::CliqueGraph => "gcn",
            AblationMode::SingleGroup => "single-group",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("environment: {0}")]
    Env(#[from] EnvError),
    #[error("tensor: {0}")]
    Tensor(#[from] TensorError),
    #[error("grouping: {0}")]
    Spectral(#[from] SpectralError),
}

/// Per-episode training diagnostics. Loss fields repeat the most recent
/// optimization step's values (zero until the first update).
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeMetrics {
    pub episode: usize,
    pub steps: usize,
    pub reward: f64,
    /// Moved-agent fraction at the latest grouping update opportunity.
    pub eta: f64,
    pub grouping_version: u64,
    pub k: usize,
    /// Size-weighted mean member silhouette of the active grouping.
    pub silhouette: f64,
    /// Pairwise messages implied by the active grouping.
    pub message_count: usize,
    pub loss_task: f64,
    pub loss_group: f64,
    pub loss_att: f64,
    /// Group loss with the literal cross normalization, for comparison.
    pub loss_group_raw: f64,
}

/// One adopted grouping and the step it took effect.
#[derive(Debug, Clone)]
pub struct TimelineRow {
    pub step: u64,
    pub grouping: Grouping,
}

/// Everything a finished (or aborted) run produces.
#[derive(Debug)]
pub struct TrainOutput {
    pub metrics: Vec<EpisodeMetrics>,
    /// `cooccurrence[i][j]`: timesteps agents `i` and `j` shared a group.
    pub cooccurrence: Vec<Vec<u64>>,
    pub timeline: Vec<TimelineRow>,
    pub model: Model,
    pub params: ParamSet,
    /// Set when training stopped early on a non-finite loss; `params` then
    /// holds the last state that produced finite losses.
    pub abort: Option<String>,
}

#[derive(Debug, Clone, Copy, Default)]
struct LossStats {
    task: f64,
    group: f64,
    att: f64,
    raw: f64,
}

/// Independent deterministic stream `s` of the run seed.
fn stream(seed: u64, s: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(s);
    rng
}

fn obs_tensor(obs: &[Vec<f64>]) -> Result<Tensor, TensorError> {
    let n = obs.len();
    let d = obs[0].len();
    let mut flat = Vec::with_capacity(n * d);
    for row in obs {
        flat.extend_from_slice(row);
    }
    Tensor::from_vec(flat, &[n, d])
}

fn state_row(tape: &mut Tape, state: &[f64]) -> Result<Var, TensorError> {
    let t = Tensor::from_vec(state.to_vec(), &[1, state.len()])?;
    Ok(tape.constant(t))
}

fn one_hot_rows(actions: &[usize], n_actions: usize) -> Tensor {
    let mut t = Tensor::zeros(&[actions.len(), n_actions]);
    for (i, &a) in actions.iter().enumerate() {
        t.data_mut()[i * n_actions + a] = 1.0;
    }
    t
}

/// Size-weighted mean member silhouette; zero for the single-group partition.
fn grouping_silhouette(g: &Grouping) -> f64 {
    let members = g.members();
    let total: f64 =
        members.iter().enumerate().map(|(i, m)| m.len() as f64 * g.cohesion[i]).sum();
    total / g.labels.len().max(1) as f64
}

/// Row sum of the action-masked matrix as a `1 x 1` scalar, averaged over
/// agents: used for both chosen utilities and chosen log-probabilities.
fn masked_mean(
    tape: &mut Tape,
    matrix: Var,
    mask: &Tensor,
) -> Result<Var, TensorError> {
    let n = mask.rows();
    let a = mask.cols();
    let m = tape.constant(mask.clone());
    let sel = tape.mul(matrix, m)?;
    let ones_a = tape.constant(Tensor::full(&[a, 1], 1.0));
    let col = tape.matmul(sel, ones_a)?;
    let ones_n = tape.constant(Tensor::full(&[1, n], 1.0));
    let total = tape.matmul(ones_n, col)?;
    Ok(tape.scalar_mul(total, 1.0 / n as f64))
}

/// Per-agent chosen utilities as a `1 x n` row.
fn chosen_row(tape: &mut Tape, q: Var, mask: &Tensor) -> Result<Var, TensorError> {
    let a = mask.cols();
    let m = tape.constant(mask.clone());
    let sel = tape.mul(q, m)?;
    let ones_a = tape.constant(Tensor::full(&[a, 1], 1.0));
    let col = tape.matmul(sel, ones_a)?;
    tape.transpose(col)
}

/// Elementwise log that lifts exact zeros to one first, so masked-out entries
/// contribute `0 · log 1 = 0` instead of poisoning the matrix. Entries that
/// are actually selected are strictly positive under categorical sampling.
fn masked_log(tape: &mut Tape, probs: Var) -> Result<Var, TensorError> {
    let lift: Vec<f64> =
        tape.value(probs).data().iter().map(|&v| if v == 0.0 { 1.0 } else { 0.0 }).collect();
    let shape = tape.value(probs).shape().to_vec();
    let lift = tape.constant(Tensor::from_vec(lift, &shape)?);
    let shifted = tape.add(probs, lift)?;
    tape.log(shifted)
}

fn add_opt(tape: &mut Tape, acc: Option<Var>, term: Var) -> Result<Option<Var>, TensorError> {
    Ok(Some(match acc {
        Some(a) => tape.add(a, term)?,
        None => term,
    }))
}

/// One grouping update opportunity at `step` (a multiple of the interval).
///
/// The very first opportunity initializes the hypergraph outright from the
/// clustering (the change-fraction rule compares successive groupings and
/// cannot bootstrap one: matching always keeps at least one agent in place,
/// so the change fraction never exceeds (n-1)/n from the degenerate start).
/// Every later opportunity applies the threshold rule unchanged.
fn grouping_opportunity(
    grouping: &Grouping,
    window: &StateHistoryWindow,
    cfg: &SpectralConfig,
    step: u64,
    rng: &mut ChaCha8Rng,
) -> Result<Grouping, SpectralError> {
    if grouping.version == 0 {
        let mut candidate = cluster(window, cfg, rng)?;
        if candidate.labels == grouping.labels {
            return Ok(grouping.clone());
        }
        candidate.eta_last = eta(grouping, &candidate);
        candidate.version = grouping.version + 1;
        Ok(candidate)
    } else {
        maybe_update(grouping, window, cfg, step, rng)
    }
}

/// One greedy or exploratory forward pass on a gradient-free tape.
/// Returns the action-selection rows and the next recurrent state.
fn rollout_forward(
    model: &Model,
    ps: &ParamSet,
    hidden: &Tensor,
    obs: &Tensor,
    hg: &Hypergraph,
    mode: LearnMode,
) -> Result<(Tensor, Tensor), TensorError> {
    let mut tape = Tape::inactive();
    let bound = model.bind(&mut tape, ps);
    let h_prev = tape.constant(hidden.clone());
    let o = tape.constant(obs.clone());
    let emb = bound.encode(&mut tape, o, h_prev)?;
    let (h_l, _) = bound.conv_forward(&mut tape, emb, hg)?;
    let rows = match mode {
        LearnMode::Value => bound.q_values(&mut tape, emb, h_l)?,
        LearnMode::Policy => bound.policy_probs(&mut tape, emb, h_l)?,
    };
    Ok((tape.value(rows).clone(), tape.value(emb).clone()))
}

/// Bootstrap targets for every transition of `ep`: the terminal transition
/// uses the bare reward, the rest bootstrap through the target network with
/// the online network picking the action when `double_q` is set.
fn value_targets(
    model: &Model,
    ps: &ParamSet,
    target_ps: &ParamSet,
    cfg: &LearnConfig,
    ep: &EpisodeRecord,
) -> Result<Vec<f64>, TrainError> {
    let n = model.n_agents;
    let t_len = ep.len();
    let hg = build_hypergraph(&ep.grouping);
    let mut tape = Tape::inactive();
    let online = model.bind(&mut tape, ps);
    let target = model.bind(&mut tape, target_ps);
    let mut h_on = online.initial_hidden(&mut tape);
    let mut h_tg = target.initial_hidden(&mut tape);
    let mut y = vec![0.0; t_len];
    for f in 0..t_len {
        let o = tape.constant(ep.observations[f].clone());
        h_on = online.encode(&mut tape, o, h_on)?;
        h_tg = target.encode(&mut tape, o, h_tg)?;
        if f == 0 {
            continue;
        }
        // Frame f scores the bootstrap for transition f-1 (non-terminal).
        let (hl_tg, _) = target.conv_forward(&mut tape, h_tg, &hg)?;
        let q_tg = target.q_values(&mut tape, h_tg, hl_tg)?;
        let chosen: Vec<usize> = if cfg.double_q {
            let (hl_on, _) = online.conv_forward(&mut tape, h_on, &hg)?;
            let q_on = online.q_values(&mut tape, h_on, hl_on)?;
            (0..n).map(|i| argmax_lowest(tape.value(q_on).row(i))).collect()
        } else {
            (0..n).map(|i| argmax_lowest(tape.value(q_tg).row(i))).collect()
        };
        let picked: Vec<f64> =
            chosen.iter().enumerate().map(|(i, &a)| tape.value(q_tg).at(i, a)).collect();
        let q_row = tape.constant(Tensor::from_vec(picked, &[1, n])?);
        let s = state_row(&mut tape, &ep.states[f])?;
        let qtot = target.mix(&mut tape, q_row, s)?;
        y[f - 1] = ep.rewards[f - 1] + cfg.weights.gamma * tape.value(qtot).data()[0];
    }
    y[t_len - 1] = ep.rewards[t_len - 1];
    Ok(y)
}

/// One optimization step of the monotonic-mixing learner over a batch of
/// episodes. Returns `None` without touching the parameters when the loss or
/// gradients are non-finite.
fn value_update(
    model: &Model,
    ps: &mut ParamSet,
    target_ps: &ParamSet,
    opt: &mut Optimizer,
    cfg: &LearnConfig,
    batch: &[&EpisodeRecord],
) -> Result<Option<LossStats>, TrainError> {
    let n_actions = model.n_actions;
    let targets: Vec<Vec<f64>> = batch
        .iter()
        .map(|ep| value_targets(model, ps, target_ps, cfg, ep))
        .collect::<Result<_, _>>()?;

    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, ps);
    let mut task_acc: Option<Var> = None;
    let mut group_acc: Option<Var> = None;
    let mut att_acc: Option<Var> = None;
    let mut raw_sum = 0.0;
    let mut count = 0usize;
    for (ei, ep) in batch.iter().enumerate() {
        let hg = build_hypergraph(&ep.grouping);
        let mut h = bound.initial_hidden(&mut tape);
        for t in 0..ep.len() {
            let o = tape.constant(ep.observations[t].clone());
            h = bound.encode(&mut tape, o, h)?;
            let (hl, alphas) = bound.conv_forward(&mut tape, h, &hg)?;
            let q = bound.q_values(&mut tape, h, hl)?;
            let mask = one_hot_rows(&ep.actions[t], n_actions);
            let q_row = chosen_row(&mut tape, q, &mask)?;
            let s = state_row(&mut tape, &ep.states[t])?;
            let qtot = bound.mix(&mut tape, q_row, s)?;
            let y = tape.constant(Tensor::from_vec(vec![targets[ei][t]], &[1, 1])?);
            let d = tape.sub(qtot, y)?;
            let sq = tape.square(d);
            task_acc = add_opt(&mut tape, task_acc, sq)?;
            let gl = group_loss(&mut tape, hl, &ep.grouping, cfg.weights.beta)?;
            group_acc = add_opt(&mut tape, group_acc, gl.loss)?;
            raw_sum += gl.raw_literal;
            let ae = att_entropy_loss(&mut tape, &alphas)?;
            att_acc = add_opt(&mut tape, att_acc, ae)?;
            count += 1;
        }
    }
    let inv = 1.0 / count as f64;
    let task2d = tape.scalar_mul(task_acc.expect("nonempty batch"), inv);
    let task = tape.sum(task2d, None)?;
    let group = tape.scalar_mul(group_acc.expect("nonempty batch"), inv);
    let att = tape.scalar_mul(att_acc.expect("nonempty batch"), inv);
    finish_update(&mut tape, ps, opt, cfg, task, group, att, raw_sum * inv)
}

/// One optimization step of the advantage actor-critic learner over a batch
/// of freshly collected episodes.
fn policy_update(
    model: &Model,
    ps: &mut ParamSet,
    opt: &mut Optimizer,
    cfg: &LearnConfig,
    batch: &[EpisodeRecord],
) -> Result<Option<LossStats>, TrainError> {
    let n_actions = model.n_actions;
    let gamma = cfg.weights.gamma;
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, ps);
    let mut actor_acc: Option<Var> = None;
    let mut critic_acc: Option<Var> = None;
    let mut group_acc: Option<Var> = None;
    let mut att_acc: Option<Var> = None;
    let mut raw_sum = 0.0;
    let mut count = 0usize;
    // (log-prob node, one-step target, raw advantage) per batch step; the
    // critic terms go on the tape immediately, the actor terms wait until
    // every advantage is known so they can be standardized batch-wide.
    let mut steps: Vec<(Var, f64, f64)> = Vec::new();
    for ep in batch {
        let hg = build_hypergraph(&ep.grouping);
        let mut h = bound.initial_hidden(&mut tape);
        let t_len = ep.len();
        let mut values: Vec<Var> = Vec::with_capacity(t_len);
        let mut logp_means: Vec<Var> = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let o = tape.constant(ep.observations[t].clone());
            h = bound.encode(&mut tape, o, h)?;
            let (hl, alphas) = bound.conv_forward(&mut tape, h, &hg)?;
            let probs = bound.policy_probs(&mut tape, h, hl)?;
            let lp = masked_log(&mut tape, probs)?;
            let mask = one_hot_rows(&ep.actions[t], n_actions);
            logp_means.push(masked_mean(&mut tape, lp, &mask)?);
            let s = state_row(&mut tape, &ep.states[t])?;
            values.push(bound.critic_value(&mut tape, s, hl)?);
            let gl = group_loss(&mut tape, hl, &ep.grouping, cfg.weights.beta)?;
            group_acc = add_opt(&mut tape, group_acc, gl.loss)?;
            raw_sum += gl.raw_literal;
            let ae = att_entropy_loss(&mut tape, &alphas)?;
            att_acc = add_opt(&mut tape, att_acc, ae)?;
            count += 1;
        }
        // One-step bootstrapped targets; advantages are detached numbers so
        // only the log-probability term carries the policy gradient.
        for t in 0..t_len {
            let boot =
                if t + 1 < t_len { gamma * tape.value(values[t + 1]).data()[0] } else { 0.0 };
            let target = ep.rewards[t] + boot;
            let advantage = target - tape.value(values[t]).data()[0];
            steps.push((logp_means[t], target, advantage));
            let tgt = tape.constant(Tensor::from_vec(vec![target], &[1, 1])?);
            let d = tape.sub(values[t], tgt)?;
            let c = tape.square(d);
            critic_acc = add_opt(&mut tape, critic_acc, c)?;
        }
    }
    let (shift, scale) = if cfg.advantage_norm {
        let m = steps.iter().map(|s| s.2).sum::<f64>() / steps.len() as f64;
        let var = steps.iter().map(|s| (s.2 - m) * (s.2 - m)).sum::<f64>() / steps.len() as f64;
        (m, var.sqrt().max(1e-8))
    } else {
        (0.0, 1.0)
    };
    if log::log_enabled!(log::Level::Debug) {
        // Critic quality: explained variance of the bootstrapped targets.
        // Near 0 the advantages are pure critic noise and the actor term
        // cannot point anywhere useful; healthy runs climb toward 1.
        let len = steps.len() as f64;
        let t_mean = steps.iter().map(|s| s.1).sum::<f64>() / len;
        let t_var = steps.iter().map(|s| (s.1 - t_mean).powi(2)).sum::<f64>() / len;
        let a_mean = steps.iter().map(|s| s.2).sum::<f64>() / len;
        let a_var = steps.iter().map(|s| (s.2 - a_mean).powi(2)).sum::<f64>() / len;
        let ev = if t_var > 0.0 { 1.0 - a_var / t_var } else { 0.0 };
        debug!(
            "policy batch: {} steps, target mean {t_mean:.4} sd {:.4}, adv mean {a_mean:.4} sd {:.4}, critic EV {ev:.3}",
            steps.len(),
            t_var.sqrt(),
            a_var.sqrt(),
        );
    }
    for &(lp, _, advantage) in &steps {
        let actor_term = tape.scalar_mul(lp, -(advantage - shift) / scale);
        actor_acc = add_opt(&mut tape, actor_acc, actor_term)?;
    }
    let inv = 1.0 / count as f64;
    let actor = tape.scalar_mul(actor_acc.expect("nonempty batch"), inv);
    let critic = tape.scalar_mul(critic_acc.expect("nonempty batch"), inv);
    let critic_w = tape.scalar_mul(critic, cfg.weights.alpha_critic);
    let task2d = tape.add(actor, critic_w)?;
    let task = tape.sum(task2d, None)?;
    let group = tape.scalar_mul(group_acc.expect("nonempty batch"), inv);
    let att = tape.scalar_mul(att_acc.expect("nonempty batch"), inv);
    finish_update(&mut tape, ps, opt, cfg, task, group, att, raw_sum * inv)
}

/// Shared tail of both updates: combine terms, check finiteness, backprop,
/// clip and step. `None` means the step was rejected as non-finite and the
/// parameters were left untouched.
#[allow(clippy::too_many_arguments)]
fn finish_update(
    tape: &mut Tape,
    ps: &mut ParamSet,
    opt: &mut Optimizer,
    cfg: &LearnConfig,
    task: Var,
    group: Var,
    att: Var,
    raw: f64,
) -> Result<Option<LossStats>, TrainError> {
    let loss = total_loss(tape, task, group, att, cfg.weights.lambda1, cfg.weights.lambda2)?;
    let stats = LossStats {
        task: tape.value(task).data()[0],
        group: tape.value(group).data()[0],
        att: tape.value(att).data()[0],
        raw,
    };
    if !tape.value(loss).data()[0].is_finite() {
        return Ok(None);
    }
    tape.backward(loss)?;
    ps.zero_grad();
    tape.accumulate_param_grads(ps);
    if !ps.grad_sq_norm().is_finite() {
        return Ok(None);
    }
    opt.step(ps, cfg.grad_clip);
    Ok(Some(stats))
}

/// Trains one run to completion (or non-finite abort) and returns all its
/// artifacts. Deterministic in `seed`: every random stream is derived from it.
pub fn train_run(
    env_cfg: &PPConfig,
    spectral_cfg: &SpectralConfig,
    model_cfg: &ModelConfig,
    learn_cfg: &LearnConfig,
    ablation: AblationMode,
    seed: u64,
) -> Result<TrainOutput, TrainError> {
    env_cfg.validate()?;
    let n = env_cfg.n_predators;
    let mut init_rng = stream(seed, 0);
    let mut env_rng = stream(seed, 1);
    let mut act_rng = stream(seed, 2);
    let mut spec_rng = stream(seed, 3);
    let mut replay_rng = stream(seed, 4);

    let mut ps = ParamSet::new();
    let model = Model::init(
        learn_cfg.mode,
        ablation.conv_variant(),
        env_cfg.obs_len(),
        env_cfg.state_len(),
        n,
        env::N_ACTIONS,
        model_cfg,
        &mut ps,
        &mut init_rng,
    );
    let mut target_ps = ps.clone();
    let mut opt = Optimizer::new(learn_cfg.optimizer_kind(), learn_cfg.lr, &ps);

    let mut window = StateHistoryWindow::new(n, env_cfg.obs_len(), spectral_cfg.window_len);
    let mut grouping = Grouping::single_group(n);
    let mut timeline = vec![TimelineRow { step: 0, grouping: grouping.clone() }];
    let mut cooccurrence = vec![vec![0u64; n]; n];
    let mut metrics: Vec<EpisodeMetrics> = Vec::with_capacity(learn_cfg.episodes);
    let mut replay = ReplayBuffer::new(learn_cfg.replay_capacity);
    let mut policy_batch: Vec<EpisodeRecord> = Vec::new();
    let mut policy_steps = 0usize;
    let mut global_step: u64 = 0;
    let mut last_update: u64 = 0;
    let mut opt_steps = 0usize;
    let mut last_losses = LossStats::default();
    let mut abort: Option<String> = None;

    info!(
        "training starts: mode {:?}, variant {}, {} episodes, seed {seed}",
        learn_cfg.mode,
        ablation.label(),
        learn_cfg.episodes
    );
    for episode in 0..learn_cfg.episodes {
        let ep_grouping = grouping.clone();
        let hg = build_hypergraph(&ep_grouping);
        let members = ep_grouping.members();
        let (mut state, mut obs) = env::reset(env_cfg, &mut env_rng);
        let mut record = EpisodeRecord {
            observations: vec![obs_tensor(&obs)?],
            states: vec![env::global_state(env_cfg, &state)],
            actions: Vec::new(),
            rewards: Vec::new(),
            grouping: ep_grouping.clone(),
        };
        let mut hidden = Tensor::zeros(&[n, model_cfg.hidden]);
        let mut ep_reward = 0.0;
        loop {
            for (agent, o) in obs.iter().enumerate() {
                window.push(agent, o)?;
            }
            for group in &members {
                for &i in group {
                    for &j in group {
                        cooccurrence[i][j] += 1;
                    }
                }
            }
            let obs_t = obs_tensor(&obs)?;
            let (rows, next_hidden) =
                rollout_forward(&model, &ps, &hidden, &obs_t, &hg, learn_cfg.mode)?;
            let actions = select_actions(
                &rows,
                learn_cfg.mode,
                learn_cfg.epsilon(global_step as usize),
                &mut act_rng,
            );
            let result = env::step(env_cfg, &state, &actions, &mut env_rng)?;
            global_step += 1;
            ep_reward += result.reward;
            hidden = next_hidden;
            record.actions.push(actions);
            record.rewards.push(result.reward);
            record.observations.push(obs_tensor(&result.observations)?);
            record.states.push(env::global_state(env_cfg, &result.state));
            state = result.state;
            obs = result.observations;
            if result.done {
                break;
            }
        }
        let steps = state.step;

        match learn_cfg.mode {
            LearnMode::Value => {
                replay.push(record);
                if replay.len() >= learn_cfg.batch_episodes {
                    let batch = replay.sample(learn_cfg.batch_episodes, &mut replay_rng);
                    match value_update(&model, &mut ps, &target_ps, &mut opt, learn_cfg, &batch)? {
                        Some(stats) => {
                            last_losses = stats;
                            opt_steps += 1;
                            if learn_cfg.target_sync > 0 && opt_steps % learn_cfg.target_sync == 0
                            {
                                target_ps.copy_values_from(&ps);
                                debug!("target network synced at episode {episode}");
                            }
                        }
                        None => abort = Some(format!("non-finite loss at episode {episode}")),
                    }
                }
            }
            LearnMode::Policy => {
                policy_steps += record.len();
                policy_batch.push(record);
                if policy_steps >= learn_cfg.batch_steps {
                    for _ in 0..learn_cfg.opt_epochs.max(1) {
                        match policy_update(&model, &mut ps, &mut opt, learn_cfg, &policy_batch)? {
                            Some(stats) => {
                                last_losses = stats;
                                opt_steps += 1;
                            }
                            None => {
                                abort = Some(format!("non-finite loss at episode {episode}"));
                                break;
                            }
                        }
                    }
                    policy_batch.clear();
                    policy_steps = 0;
                }
            }
        }

        if abort.is_none() && ablation != AblationMode::SingleGroup && spectral_cfg.interval > 0 {
            let crossings = (global_step - last_update) / spectral_cfg.interval;
            if crossings >= 1 {
                last_update += crossings * spectral_cfg.interval;
                let next = grouping_opportunity(
                    &grouping,
                    &window,
                    spectral_cfg,
                    last_update,
                    &mut spec_rng,
                )?;
                if next.version != grouping.version {
                    info!(
                        "grouping v{} adopted at step {last_update}: k={} labels={:?}",
                        next.version, next.k, next.labels
                    );
                    timeline.push(TimelineRow { step: last_update, grouping: next.clone() });
                }
                grouping = next;
            }
        }

        metrics.push(EpisodeMetrics {
            episode,
            steps,
            reward: ep_reward,
            eta: ep_grouping.eta_last,
            grouping_version: ep_grouping.version,
            k: ep_grouping.k,
            silhouette: grouping_silhouette(&ep_grouping),
            message_count: message_count(&ep_grouping),
            loss_task: last_losses.task,
            loss_group: last_losses.group,
            loss_att: last_losses.att,
            loss_group_raw: last_losses.raw,
        });
        if let Some(msg) = &abort {
            info!("training aborted: {msg}");
            break;
        }
    }
    log_convergence(&metrics);
    Ok(TrainOutput { metrics, cooccurrence, timeline, model, params: ps, abort })
}

/// Extension diagnostic: the first 10-episode window whose mean step count
/// stays within 10% of the final mean for 5 consecutive windows.
fn log_convergence(metrics: &[EpisodeMetrics]) {
    const WINDOW: usize = 10;
    const SUSTAIN: usize = 5;
    if metrics.len() < WINDOW * SUSTAIN {
        return;
    }
    let windows: Vec<f64> = metrics
        .chunks(WINDOW)
        .filter(|c| c.len() == WINDOW)
        .map(|c| c.iter().map(|m| m.steps as f64).sum::<f64>() / c.len() as f64)
        .collect();
    let tail = metrics.len() / 10;
    let final_mean = metrics[metrics.len() - tail.max(1)..]
        .iter()
        .map(|m| m.steps as f64)
        .sum::<f64>()
        / tail.max(1) as f64;
    let threshold = final_mean * 1.1;
    let converged = windows
        .windows(SUSTAIN)
        .position(|w| w.iter().all(|&m| m <= threshold))
        .map(|w| w * WINDOW);
    match converged {
        Some(e) => info!("convergence (steps within 10% of final mean, sustained): episode {e}"),
        None => info!("convergence (steps within 10% of final mean, sustained): not reached"),
    }
}

/// Summary statistics of greedy evaluation rollouts.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub episodes: usize,
    pub mean_steps: f64,
    pub std_steps: f64,
    pub success_rate: f64,
}

/// Runs greedy rollouts (argmax utilities or argmax probabilities) with the
/// same streaming grouping dynamics as training, but no learning.
pub fn evaluate(
    model: &Model,
    ps: &ParamSet,
    env_cfg: &PPConfig,
    spectral_cfg: &SpectralConfig,
    mode: LearnMode,
    ablation: AblationMode,
    episodes: usize,
    seed: u64,
) -> Result<EvalSummary, TrainError> {
    env_cfg.validate()?;
    let n = env_cfg.n_predators;
    let mut env_rng = stream(seed, 10);
    let mut spec_rng = stream(seed, 11);
    let mut window = StateHistoryWindow::new(n, env_cfg.obs_len(), spectral_cfg.window_len);
    let mut grouping = Grouping::single_group(n);
    let mut global_step: u64 = 0;
    let mut last_update: u64 = 0;
    let mut steps = Vec::with_capacity(episodes);
    let mut successes = 0usize;
    let hidden_dim = model.encoder.hidden_dim;
    for _ in 0..episodes {
        let hg = build_hypergraph(&grouping);
        let (mut state, mut obs) = env::reset(env_cfg, &mut env_rng);
        let mut hidden = Tensor::zeros(&[n, hidden_dim]);
        loop {
            for (agent, o) in obs.iter().enumerate() {
                window.push(agent, o)?;
            }
            let obs_t = obs_tensor(&obs)?;
            let (rows, next_hidden) = rollout_forward(&model, ps, &hidden, &obs_t, &hg, mode)?;
            let actions: Vec<usize> = (0..n).map(|i| argmax_lowest(rows.row(i))).collect();
            let result = env::step(env_cfg, &state, &actions, &mut env_rng)?;
            global_step += 1;
            hidden = next_hidden;
            state = result.state;
            obs = result.observations;
            if result.done {
                if result.success {
                    successes += 1;
                }
                break;
            }
        }
        steps.push(state.step as f64);
        if ablation != AblationMode::SingleGroup && spectral_cfg.interval > 0 {
            let crossings = (global_step - last_update) / spectral_cfg.interval;
            if crossings >= 1 {
                last_update += crossings * spectral_cfg.interval;
                grouping = grouping_opportunity(
                    &grouping,
                    &window,
                    spectral_cfg,
                    last_update,
                    &mut spec_rng,
                )?;
            }
        }
    }
    let mean = steps.iter().sum::<f64>() / episodes.max(1) as f64;
    let var = steps.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / episodes.max(1) as f64;
    Ok(EvalSummary {
        episodes,
        mean_steps: mean,
        std_steps: var.sqrt(),
        success_rate: successes as f64 / episodes.max(1) as f64,
    })
}
