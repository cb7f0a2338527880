//! Network components shared by both learners.

use rand::Rng;

use crate::hypergraph::{BoundConv, ConvConfig, ConvVariant, GroupConv, Hypergraph};
use crate::tensor::{
    elu, linear, BoundGru, BoundLinear, GruCell, LinearLayer, ParamSet, Result, Tape, Tensor,
    TensorError, Var,
};

use super::{LearnMode, ModelConfig};

/// Shared per-agent recurrent encoder: a linear projection of the raw
/// observation feeding one GRU step. The hidden state is the agent's
/// trajectory summary; reset it to zeros at episode start.
#[derive(Debug, Clone)]
pub struct AgentEncoder {
    pub obs_proj: LinearLayer,
    pub gru: GruCell,
    pub hidden_dim: usize,
}

impl AgentEncoder {
    pub fn init<R: Rng>(
        obs_len: usize,
        hidden_dim: usize,
        prefix: &str,
        ps: &mut ParamSet,
        rng: &mut R,
    ) -> Self {
        Self {
            obs_proj: LinearLayer::init(ps, &format!("{prefix}.obs_proj"), obs_len, hidden_dim, rng),
            gru: GruCell::init(ps, &format!("{prefix}.gru"), hidden_dim, hidden_dim, rng),
            hidden_dim,
        }
    }
}

/// Per-action utility head for value mode.
#[derive(Debug, Clone)]
pub struct ValueHeads {
    /// Maps `[encoder state ‖ group embedding]` to one utility per action.
    pub q_head: LinearLayer,
}

/// State-conditioned monotonic combiner of per-agent chosen utilities.
///
/// Both weight matrices are generated from the global state by linear
/// hypernetworks and passed through an elementwise absolute value, which
/// makes the team value monotone in every agent utility regardless of the
/// hypernetwork parameters.
#[derive(Debug, Clone)]
pub struct MixingNetwork {
    pub hyper_w1: LinearLayer,
    pub hyper_b1: LinearLayer,
    pub hyper_w2: LinearLayer,
    pub hyper_b2: LinearLayer,
    pub embed_dim: usize,
    pub n_agents: usize,
}

impl MixingNetwork {
    pub const EMBED_DIM: usize = 32;

    pub fn init<R: Rng>(
        state_len: usize,
        n_agents: usize,
        prefix: &str,
        ps: &mut ParamSet,
        rng: &mut R,
    ) -> Self {
        let embed_dim = Self::EMBED_DIM;
        Self {
            hyper_w1: LinearLayer::init(
                ps,
                &format!("{prefix}.hyper_w1"),
                state_len,
                n_agents * embed_dim,
                rng,
            ),
            hyper_b1: LinearLayer::init(ps, &format!("{prefix}.hyper_b1"), state_len, embed_dim, rng),
            hyper_w2: LinearLayer::init(ps, &format!("{prefix}.hyper_w2"), state_len, embed_dim, rng),
            hyper_b2: LinearLayer::init(ps, &format!("{prefix}.hyper_b2"), state_len, 1, rng),
            embed_dim,
            n_agents,
        }
    }
}

/// Actor and centralized critic for policy mode.
#[derive(Debug, Clone)]
pub struct PolicyHeads {
    /// Maps `[encoder state ‖ group embedding]` to action logits.
    pub actor_head: LinearLayer,
    /// Two-layer critic on `[global state ‖ mean group embedding]`.
    pub critic_l1: LinearLayer,
    pub critic_l2: LinearLayer,
}

#[derive(Debug, Clone)]
pub enum Heads {
    Value { q: ValueHeads, mixer: MixingNetwork },
    Policy(PolicyHeads),
}

/// The full parameter bundle of one learner.
#[derive(Debug, Clone)]
pub struct Model {
    pub encoder: AgentEncoder,
    pub conv: GroupConv,
    pub heads: Heads,
    pub n_agents: usize,
    pub n_actions: usize,
}

impl Model {
    #[allow(clippy::too_many_arguments)]
    pub fn init<R: Rng>(
        mode: LearnMode,
        variant: ConvVariant,
        obs_len: usize,
        state_len: usize,
        n_agents: usize,
        n_actions: usize,
        cfg: &ModelConfig,
        ps: &mut ParamSet,
        rng: &mut R,
    ) -> Self {
        let encoder = AgentEncoder::init(obs_len, cfg.hidden, "encoder", ps, rng);
        let conv_cfg = ConvConfig {
            in_dim: cfg.hidden,
            hidden_dim: cfg.hidden,
            out_dim: cfg.conv_out,
            layers: cfg.conv_layers,
            heads: cfg.heads,
            att_dim: cfg.att_dim,
            variant,
        };
        let conv = GroupConv::init(&conv_cfg, "conv", ps, rng);
        let joint = cfg.hidden + cfg.conv_out;
        let heads = match mode {
            LearnMode::Value => Heads::Value {
                q: ValueHeads {
                    q_head: LinearLayer::init(ps, "q_head", joint, n_actions, rng),
                },
                mixer: MixingNetwork::init(state_len, n_agents, "mixer", ps, rng),
            },
            LearnMode::Policy => Heads::Policy(PolicyHeads {
                actor_head: LinearLayer::init(ps, "actor_head", joint, n_actions, rng),
                critic_l1: LinearLayer::init(
                    ps,
                    "critic.l1",
                    state_len + cfg.conv_out,
                    cfg.critic_hidden,
                    rng,
                ),
                critic_l2: LinearLayer::init(ps, "critic.l2", cfg.critic_hidden, 1, rng),
            }),
        };
        Self { encoder, conv, heads, n_agents, n_actions }
    }

    pub fn bind(&self, tape: &mut Tape, ps: &ParamSet) -> BoundModel {
        BoundModel {
            obs_proj: self.encoder.obs_proj.bind(tape, ps),
            gru: self.encoder.gru.bind(tape, ps),
            conv: self.conv.bind(tape, ps),
            heads: match &self.heads {
                Heads::Value { q, mixer } => BoundHeads::Value {
                    q_head: q.q_head.bind(tape, ps),
                    w1: mixer.hyper_w1.bind(tape, ps),
                    b1: mixer.hyper_b1.bind(tape, ps),
                    w2: mixer.hyper_w2.bind(tape, ps),
                    b2: mixer.hyper_b2.bind(tape, ps),
                    embed_dim: mixer.embed_dim,
                    n_agents: mixer.n_agents,
                },
                Heads::Policy(p) => BoundHeads::Policy {
                    actor: p.actor_head.bind(tape, ps),
                    critic_l1: p.critic_l1.bind(tape, ps),
                    critic_l2: p.critic_l2.bind(tape, ps),
                },
            },
            hidden_dim: self.encoder.hidden_dim,
            n_agents: self.n_agents,
        }
    }
}

enum BoundHeads {
    Value {
        q_head: BoundLinear,
        w1: BoundLinear,
        b1: BoundLinear,
        w2: BoundLinear,
        b2: BoundLinear,
        embed_dim: usize,
        n_agents: usize,
    },
    Policy {
        actor: BoundLinear,
        critic_l1: BoundLinear,
        critic_l2: BoundLinear,
    },
}

/// A [`Model`] bound onto one tape.
pub struct BoundModel {
    obs_proj: BoundLinear,
    gru: BoundGru,
    conv: BoundConv,
    heads: BoundHeads,
    hidden_dim: usize,
    n_agents: usize,
}

impl BoundModel {
    /// Soft bound on actor logits (see [`BoundModel::policy_logits`]).
    pub const LOGIT_CAP: f64 = 2.5;

    /// Zero initial hidden state for `n` agents.
    pub fn initial_hidden(&self, tape: &mut Tape) -> Var {
        tape.constant(Tensor::zeros(&[self.n_agents, self.hidden_dim]))
    }

    /// One encoder step: projects observations and advances the GRU.
    /// `obs` is agents x obs_len; returns the next hidden state, which is
    /// also the per-agent embedding.
    pub fn encode(&self, tape: &mut Tape, obs: Var, hidden: Var) -> Result<Var> {
        let x = linear(tape, obs, self.obs_proj)?;
        GruCell::step(tape, x, hidden, self.gru)
    }

    /// Group-aware embeddings and attention matrices for the current
    /// hypergraph.
    pub fn conv_forward(
        &self,
        tape: &mut Tape,
        embeddings: Var,
        hg: &Hypergraph,
    ) -> Result<(Var, Vec<Var>)> {
        self.conv.forward(tape, embeddings, hg)
    }

    /// Per-agent, per-action utilities from `[embedding ‖ group embedding]`.
    pub fn q_values(&self, tape: &mut Tape, embeddings: Var, h_l: Var) -> Result<Var> {
        let BoundHeads::Value { q_head, .. } = &self.heads else {
            return Err(TensorError::Invalid { op: "q_values", msg: "model has no value head".into() });
        };
        let hn = l2_normalize_rows(tape, h_l)?;
        let joint = tape.concat(&[embeddings, hn], 1)?;
        linear(tape, joint, *q_head)
    }

    /// Team value from chosen per-agent utilities (`1 x n`) and the global
    /// state (`1 x state_len`). Monotone in every utility.
    pub fn mix(&self, tape: &mut Tape, q_row: Var, state: Var) -> Result<Var> {
        let BoundHeads::Value { w1, b1, w2, b2, embed_dim, n_agents, .. } = &self.heads else {
            return Err(TensorError::Invalid { op: "mix", msg: "model has no mixing network".into() });
        };
        let (embed_dim, n_agents) = (*embed_dim, *n_agents);
        let w1_flat = linear(tape, state, *w1)?;
        let w1_abs = tape.abs(w1_flat);
        // Rebuild the flat 1 x (n*embed) row as an n x embed matrix.
        let chunks: Vec<Var> = (0..n_agents)
            .map(|i| tape.slice(w1_abs, 1, i * embed_dim, embed_dim))
            .collect::<Result<_>>()?;
        let w1_mat = tape.concat(&chunks, 0)?;
        let b1_row = linear(tape, state, *b1)?;
        let pre = tape.matmul(q_row, w1_mat)?;
        let pre = tape.add(pre, b1_row)?;
        let hidden = elu(tape, pre)?;
        let w2_row = linear(tape, state, *w2)?;
        let w2_abs = tape.abs(w2_row);
        let w2_col = tape.transpose(w2_abs)?;
        let out = tape.matmul(hidden, w2_col)?;
        let b2_val = linear(tape, state, *b2)?;
        tape.add(out, b2_val)
    }

    /// Per-agent action distributions (row softmax of actor logits).
    pub fn policy_probs(&self, tape: &mut Tape, embeddings: Var, h_l: Var) -> Result<Var> {
        let logits = self.policy_logits(tape, embeddings, h_l)?;
        tape.softmax(logits, 1)
    }

    /// Actor logits, soft-capped to `±LOGIT_CAP` by a scaled tanh. The cap
    /// bounds how deterministic the sampled policy can get (every action
    /// keeps at least ~e^(-2·cap) relative probability), which keeps
    /// on-policy exploration alive: without it the cheapest way to increase
    /// the log-probability of a leading action is to inflate the logit scale,
    /// and the policy freezes onto whatever led first, long before the critic
    /// can rank actions. Greedy evaluation is unaffected (tanh preserves the
    /// argmax).
    pub fn policy_logits(&self, tape: &mut Tape, embeddings: Var, h_l: Var) -> Result<Var> {
        let BoundHeads::Policy { actor, .. } = &self.heads else {
            return Err(TensorError::Invalid {
                op: "policy_logits",
                msg: "model has no policy head".into(),
            });
        };
        let hn = l2_normalize_rows(tape, h_l)?;
        let joint = tape.concat(&[embeddings, hn], 1)?;
        let raw = linear(tape, joint, *actor)?;
        let squeezed = tape.scalar_mul(raw, 1.0 / Self::LOGIT_CAP);
        let bounded = tape.tanh(squeezed);
        Ok(tape.scalar_mul(bounded, Self::LOGIT_CAP))
    }

    /// Centralized state value from `[global state ‖ mean group embedding]`.
    /// `state` is 1 x state_len; `h_l` is agents x conv_out.
    pub fn critic_value(&self, tape: &mut Tape, state: Var, h_l: Var) -> Result<Var> {
        let BoundHeads::Policy { critic_l1, critic_l2, .. } = &self.heads else {
            return Err(TensorError::Invalid {
                op: "critic_value",
                msg: "model has no critic".into(),
            });
        };
        let n = tape.value(h_l).rows();
        let ones = tape.constant(Tensor::full(&[1, n], 1.0));
        let summed = tape.matmul(ones, h_l)?;
        let mean_h = tape.scalar_mul(summed, 1.0 / n as f64);
        let mean_n = l2_normalize_rows(tape, mean_h)?;
        let joint = tape.concat(&[state, mean_n], 1)?;
        let pre = linear(tape, joint, *critic_l1)?;
        let act = elu(tape, pre)?;
        linear(tape, act, *critic_l2)
    }
}

/// Row-wise L2 normalization: each row is scaled to unit Euclidean length
/// (rows of near-zero norm are left essentially unchanged by the epsilon).
/// The group-consistency objective is scale-free in the direction of radial
/// embedding growth, so group embeddings can grow without bound over a long
/// run; heads read the normalized rows, which carry the same directional
/// information at every scale, keeping utilities, logits and values stable.
fn l2_normalize_rows(tape: &mut Tape, x: Var) -> Result<Var> {
    let (n, d) = {
        let t = tape.value(x);
        (t.rows(), t.cols())
    };
    let sq = tape.square(x);
    let ones_col = tape.constant(Tensor::full(&[d, 1], 1.0));
    let sums = tape.matmul(sq, ones_col)?;
    let eps = tape.constant(Tensor::full(&[n, 1], 1e-12));
    let safe = tape.add(sums, eps)?;
    let norm = tape.sqrt(safe)?;
    // 1/norm via exp(-log(norm)): the op set has no elementwise division.
    let ln = tape.log(norm)?;
    let neg = tape.scalar_mul(ln, -1.0);
    let inv = tape.exp(neg);
    let ones_row = tape.constant(Tensor::full(&[1, d], 1.0));
    let grid = tape.matmul(inv, ones_row)?;
    tape.mul(x, grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::Grouping;
    use crate::hypergraph::build_hypergraph;

    fn small_model(mode: LearnMode, seed: u64) -> (Model, ParamSet) {
        let mut ps = ParamSet::new();
        let mut rng = crate::test_rng(seed);
        let cfg = ModelConfig {
            hidden: 8,
            conv_out: 6,
            conv_layers: 1,
            heads: 2,
            att_dim: 4,
            critic_hidden: 5,
        };
        let model =
            Model::init(mode, ConvVariant::Attention, 7, 9, 3, 5, &cfg, &mut ps, &mut rng);
        (model, ps)
    }

    fn forward_embeddings(
        model: &Model,
        ps: &ParamSet,
        tape: &mut Tape,
        obs: Tensor,
    ) -> (BoundModel, Var, Var) {
        let bound = model.bind(tape, ps);
        let h0 = bound.initial_hidden(tape);
        let obs = tape.constant(obs);
        let emb = bound.encode(tape, obs, h0).unwrap();
        let grouping = Grouping {
            labels: vec![0, 0, 1],
            k: 2,
            cohesion: vec![0.5, 0.5],
            version: 0,
            eta_last: 0.0,
        };
        let hg = build_hypergraph(&grouping);
        let (h_l, _) = bound.conv_forward(tape, emb, &hg).unwrap();
        (bound, emb, h_l)
    }

    #[test]
    fn zero_encoder_produces_zero_embeddings() {
        let (model, mut ps) = small_model(LearnMode::Value, 1);
        for p in ps.iter_mut() {
            p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, &ps);
        let h0 = bound.initial_hidden(&mut tape);
        let obs = tape.constant(Tensor::rand_uniform(&[3, 7], -1.0, 1.0, &mut crate::test_rng(2)));
        let emb = bound.encode(&mut tape, obs, h0).unwrap();
        assert!(tape.value(emb).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn different_hidden_states_change_embeddings() {
        let (model, ps) = small_model(LearnMode::Value, 3);
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, &ps);
        let obs_t = Tensor::rand_uniform(&[3, 7], -1.0, 1.0, &mut crate::test_rng(4));
        let obs = tape.constant(obs_t);
        let h0 = bound.initial_hidden(&mut tape);
        let h1 = tape.constant(Tensor::full(&[3, 8], 0.3));
        let e0 = bound.encode(&mut tape, obs, h0).unwrap();
        let e1 = bound.encode(&mut tape, obs, h1).unwrap();
        assert_ne!(tape.value(e0).data(), tape.value(e1).data());
    }

    #[test]
    fn q_values_shape_and_group_feature_influence() {
        let (model, ps) = small_model(LearnMode::Value, 5);
        let mut tape = Tape::new();
        let obs = Tensor::rand_uniform(&[3, 7], -1.0, 1.0, &mut crate::test_rng(6));
        let (bound, emb, h_l) = forward_embeddings(&model, &ps, &mut tape, obs);
        let q = bound.q_values(&mut tape, emb, h_l).unwrap();
        assert_eq!(tape.value(q).shape(), &[3, 5]);
        // Zeroing the group features changes the output: the head reads them.
        let zero_h = tape.constant(Tensor::zeros(&[3, 6]));
        let q0 = bound.q_values(&mut tape, emb, zero_h).unwrap();
        assert_ne!(tape.value(q).data(), tape.value(q0).data());
    }

    #[test]
    fn mixer_is_monotone_in_every_utility() {
        let (model, ps) = small_model(LearnMode::Value, 7);
        let mut rng = crate::test_rng(8);
        for _ in 0..50 {
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape, &ps);
            let state = tape.constant(Tensor::rand_uniform(&[1, 9], -1.0, 1.0, &mut rng));
            let q_t = Tensor::rand_uniform(&[1, 3], -2.0, 2.0, &mut rng);
            let q = tape.leaf_grad(q_t.clone());
            let out = bound.mix(&mut tape, q, state).unwrap();
            let loss = tape.sum(out, None).unwrap();
            tape.backward(loss).unwrap();
            let grads = tape.grad(q).unwrap();
            assert!(grads.iter().all(|&g| g >= 0.0), "negative utility gradient {grads:?}");
            // Direct perturbation check on one agent.
            let base = tape.value(out).data()[0];
            let mut tape2 = Tape::new();
            let bound2 = model.bind(&mut tape2, &ps);
            let state2 = tape2.constant(tape.value(state).clone());
            let mut bumped = q_t;
            bumped.data_mut()[1] += 1.0;
            let q2 = tape2.constant(bumped);
            let out2 = bound2.mix(&mut tape2, q2, state2).unwrap();
            assert!(tape2.value(out2).data()[0] >= base - 1e-12);
        }
    }

    #[test]
    fn zero_hypernets_give_zero_team_value() {
        let (model, mut ps) = small_model(LearnMode::Value, 9);
        for p in ps.iter_mut() {
            if p.name.starts_with("mixer") {
                p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, &ps);
        let state = tape.constant(Tensor::rand_uniform(&[1, 9], -1.0, 1.0, &mut crate::test_rng(10)));
        let q = tape.constant(Tensor::from_vec(vec![3.0, -1.0, 2.0], &[1, 3]).unwrap());
        let out = bound.mix(&mut tape, q, state).unwrap();
        assert_eq!(tape.value(out).data(), &[0.0]);
    }

    #[test]
    fn policy_probs_are_distributions() {
        let (model, ps) = small_model(LearnMode::Policy, 11);
        let mut tape = Tape::new();
        let obs = Tensor::rand_uniform(&[3, 7], -1.0, 1.0, &mut crate::test_rng(12));
        let (bound, emb, h_l) = forward_embeddings(&model, &ps, &mut tape, obs);
        let probs = bound.policy_probs(&mut tape, emb, h_l).unwrap();
        let t = tape.value(probs);
        for i in 0..3 {
            let row_sum: f64 = t.row(i).iter().sum();
            assert!((row_sum - 1.0).abs() < 1e-12);
            assert!(t.row(i).iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn uniform_policy_from_zero_actor() {
        let (model, mut ps) = small_model(LearnMode::Policy, 13);
        for p in ps.iter_mut() {
            if p.name.starts_with("actor_head") {
                p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let mut tape = Tape::new();
        let obs = Tensor::rand_uniform(&[3, 7], -1.0, 1.0, &mut crate::test_rng(14));
        let (bound, emb, h_l) = forward_embeddings(&model, &ps, &mut tape, obs);
        let probs = bound.policy_probs(&mut tape, emb, h_l).unwrap();
        for v in tape.value(probs).data() {
            assert!((v - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn critic_is_permutation_invariant_in_agents() {
        let (model, ps) = small_model(LearnMode::Policy, 15);
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, &ps);
        let state = tape.constant(Tensor::rand_uniform(&[1, 9], -1.0, 1.0, &mut crate::test_rng(16)));
        let h_t = Tensor::rand_uniform(&[3, 6], -1.0, 1.0, &mut crate::test_rng(17));
        let mut permuted_data = Vec::new();
        for i in [2usize, 0, 1] {
            permuted_data.extend_from_slice(h_t.row(i));
        }
        let h_perm = Tensor::from_vec(permuted_data, &[3, 6]).unwrap();
        let h = tape.constant(h_t);
        let hp = tape.constant(h_perm);
        let v0 = bound.critic_value(&mut tape, state, h).unwrap();
        let v1 = bound.critic_value(&mut tape, state, hp).unwrap();
        let a = tape.value(v0).data()[0];
        let b = tape.value(v1).data()[0];
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }

    #[test]
    fn critic_gradient_matches_finite_differences() {
        let (model, ps) = small_model(LearnMode::Policy, 18);
        let state_t = Tensor::rand_uniform(&[1, 9], -1.0, 1.0, &mut crate::test_rng(19));
        let err = crate::tensor::grad_check(
            |tape, h_l| {
                let bound = model.bind(tape, &ps);
                let state = tape.constant(state_t.clone());
                let v = bound.critic_value(tape, state, h_l)?;
                tape.sum(v, None)
            },
            &Tensor::rand_uniform(&[3, 6], -1.0, 1.0, &mut crate::test_rng(20)),
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "gradient error {err}");
    }

    #[test]
    fn wrong_mode_head_access_is_rejected() {
        let (value_model, ps) = small_model(LearnMode::Value, 21);
        let mut tape = Tape::new();
        let bound = value_model.bind(&mut tape, &ps);
        let x = tape.constant(Tensor::zeros(&[3, 6]));
        let s = tape.constant(Tensor::zeros(&[1, 9]));
        assert!(bound.critic_value(&mut tape, s, x).is_err());
        assert!(bound.policy_logits(&mut tape, x, x).is_err());
        let (policy_model, ps2) = small_model(LearnMode::Policy, 22);
        let mut tape2 = Tape::new();
        let bound2 = policy_model.bind(&mut tape2, &ps2);
        let q = tape2.constant(Tensor::zeros(&[1, 3]));
        assert!(bound2.mix(&mut tape2, q, s).is_err());
        assert!(bound2.q_values(&mut tape2, x, x).is_err());
    }
}
