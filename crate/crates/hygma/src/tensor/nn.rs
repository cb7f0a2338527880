//! Small trainable building blocks: affine layers and a GRU cell.
//!
//! Each block comes in two forms: an id struct holding [`ParamId`]s (owned by
//! model code, survives across passes) and a bound form holding [`Var`]s for
//! one tape. `init` registers freshly initialized parameters, `bind` puts them
//! onto a tape.

use rand::Rng;

use super::params::{ParamId, ParamSet};
use super::tape::{Tape, Var};
use super::{Result, Tensor};

/// An affine layer `x · W + b` with `W: [fan_in, fan_out]`, `b: [fan_out]`.
#[derive(Debug, Clone)]
pub struct LinearLayer {
    pub w: ParamId,
    pub b: ParamId,
}

/// A [`LinearLayer`] bound onto a tape.
#[derive(Debug, Clone, Copy)]
pub struct BoundLinear {
    pub w: Var,
    pub b: Var,
}

impl LinearLayer {
    /// Registers weight and bias drawn uniformly from `±sqrt(1/fan_in)`.
    pub fn init<R: Rng>(
        ps: &mut ParamSet,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Self {
        let w = ps.add(format!("{name}.w"), Tensor::init_uniform(&[fan_in, fan_out], fan_in, rng));
        let b = ps.add(format!("{name}.b"), Tensor::init_uniform(&[fan_out], fan_in, rng));
        Self { w, b }
    }

    pub fn bind(&self, tape: &mut Tape, ps: &ParamSet) -> BoundLinear {
        BoundLinear { w: tape.param(ps, self.w), b: tape.param(ps, self.b) }
    }
}

/// Applies a bound affine layer to `x: [n, fan_in]`.
pub fn linear(tape: &mut Tape, x: Var, layer: BoundLinear) -> Result<Var> {
    let xw = tape.matmul(x, layer.w)?;
    tape.broadcast_add_bias(xw, layer.b)
}

/// A gated recurrent cell with one bias per gate:
///
/// ```text
/// z  = sigmoid(x·W_z + h·U_z + b_z)          (update gate)
/// r  = sigmoid(x·W_r + h·U_r + b_r)          (reset gate)
/// c  = tanh(x·W_c + (r ∘ h)·U_c + b_c)       (candidate)
/// h' = z ∘ h + (1 - z) ∘ c
/// ```
///
/// A saturated update gate (`z → 1`) therefore carries the previous state
/// through unchanged, and `h'` stays inside `(-1, 1)` whenever `h` does.
#[derive(Debug, Clone)]
pub struct GruCell {
    pub w_update: ParamId,
    pub u_update: ParamId,
    pub b_update: ParamId,
    pub w_reset: ParamId,
    pub u_reset: ParamId,
    pub b_reset: ParamId,
    pub w_cand: ParamId,
    pub u_cand: ParamId,
    pub b_cand: ParamId,
    pub hidden_dim: usize,
}

/// A [`GruCell`] bound onto a tape.
#[derive(Debug, Clone, Copy)]
pub struct BoundGru {
    w_update: Var,
    u_update: Var,
    b_update: Var,
    w_reset: Var,
    u_reset: Var,
    b_reset: Var,
    w_cand: Var,
    u_cand: Var,
    b_cand: Var,
}

impl GruCell {
    pub fn init<R: Rng>(
        ps: &mut ParamSet,
        name: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Self {
        let w = |ps: &mut ParamSet, gate: &str, rng: &mut R| {
            ps.add(
                format!("{name}.w_{gate}"),
                Tensor::init_uniform(&[input_dim, hidden_dim], input_dim, rng),
            )
        };
        let w_update = w(ps, "update", rng);
        let w_reset = w(ps, "reset", rng);
        let w_cand = w(ps, "cand", rng);
        let u = |ps: &mut ParamSet, gate: &str, rng: &mut R| {
            ps.add(
                format!("{name}.u_{gate}"),
                Tensor::init_uniform(&[hidden_dim, hidden_dim], hidden_dim, rng),
            )
        };
        let u_update = u(ps, "update", rng);
        let u_reset = u(ps, "reset", rng);
        let u_cand = u(ps, "cand", rng);
        let b = |ps: &mut ParamSet, gate: &str, rng: &mut R| {
            ps.add(format!("{name}.b_{gate}"), Tensor::init_uniform(&[hidden_dim], hidden_dim, rng))
        };
        let b_update = b(ps, "update", rng);
        let b_reset = b(ps, "reset", rng);
        let b_cand = b(ps, "cand", rng);
        Self {
            w_update,
            u_update,
            b_update,
            w_reset,
            u_reset,
            b_reset,
            w_cand,
            u_cand,
            b_cand,
            hidden_dim,
        }
    }

    pub fn bind(&self, tape: &mut Tape, ps: &ParamSet) -> BoundGru {
        BoundGru {
            w_update: tape.param(ps, self.w_update),
            u_update: tape.param(ps, self.u_update),
            b_update: tape.param(ps, self.b_update),
            w_reset: tape.param(ps, self.w_reset),
            u_reset: tape.param(ps, self.u_reset),
            b_reset: tape.param(ps, self.b_reset),
            w_cand: tape.param(ps, self.w_cand),
            u_cand: tape.param(ps, self.u_cand),
            b_cand: tape.param(ps, self.b_cand),
        }
    }

    /// One recurrence step for a batch of rows: `x: [n, input_dim]`,
    /// `h_prev: [n, hidden_dim]` → `[n, hidden_dim]`.
    pub fn step(tape: &mut Tape, x: Var, h_prev: Var, gru: BoundGru) -> Result<Var> {
        let gate = |tape: &mut Tape, w: Var, u: Var, b: Var, hin: Var| -> Result<Var> {
            let xw = tape.matmul(x, w)?;
            let hu = tape.matmul(hin, u)?;
            let s = tape.add(xw, hu)?;
            tape.broadcast_add_bias(s, b)
        };
        let z_pre = gate(tape, gru.w_update, gru.u_update, gru.b_update, h_prev)?;
        let z = tape.sigmoid(z_pre);
        let r_pre = gate(tape, gru.w_reset, gru.u_reset, gru.b_reset, h_prev)?;
        let r = tape.sigmoid(r_pre);
        let rh = tape.mul(r, h_prev)?;
        let c_pre = gate(tape, gru.w_cand, gru.u_cand, gru.b_cand, rh)?;
        let c = tape.tanh(c_pre);
        // h' = z∘h + (1-z)∘c, written as c + z∘(h - c).
        let hmc = tape.sub(h_prev, c)?;
        let zh = tape.mul(z, hmc)?;
        tape.add(c, zh)
    }
}

/// Exponential linear unit composed from primitive ops:
/// `elu(x) = relu(x) + (exp(-relu(-x)) - 1)`, which equals `x` for `x > 0`
/// and `exp(x) - 1` otherwise. The exp argument is clamped to `<= 0` by
/// construction, so it can never overflow.
pub fn elu(tape: &mut Tape, x: Var) -> Result<Var> {
    let pos = tape.relu(x);
    let negx = tape.scalar_mul(x, -1.0);
    let negpart = tape.relu(negx);
    let negneg = tape.scalar_mul(negpart, -1.0);
    let e = tape.exp(negneg);
    let ones = tape.constant(Tensor::full(tape.value(x).shape(), 1.0));
    let em1 = tape.sub(e, ones)?;
    tape.add(pos, em1)
}
