//! First-order optimizers over a [`ParamSet`].

use crate::tensor::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    /// Adaptive root-mean-square step (decay 0.99, epsilon 1e-5).
    RmsProp,
    /// Adam with bias correction (0.9 / 0.999, epsilon 1e-8).
    Adam,
}

const RMS_DECAY: f64 = 0.99;
const RMS_EPS: f64 = 1e-5;
const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Per-coordinate optimizer state aligned with a specific [`ParamSet`]'s
/// layout at construction time.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    /// First-moment accumulators (Adam only).
    m: Vec<Vec<f64>>,
    /// Second-moment accumulators.
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, ps: &ParamSet) -> Self {
        let m = ps.iter().map(|p| vec![0.0; p.value.numel()]).collect();
        let v = ps.iter().map(|p| vec![0.0; p.value.numel()]).collect();
        Self { kind, lr, m, v, t: 0 }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    /// Applies one update from the gradients accumulated in `ps`, after
    /// clipping the global gradient norm to `grad_clip` (no clipping when
    /// `grad_clip <= 0`). Gradients are left untouched; callers zero them.
    pub fn step(&mut self, ps: &mut ParamSet, grad_clip: f64) {
        if grad_clip > 0.0 {
            let norm = ps.grad_sq_norm().sqrt();
            if norm > grad_clip {
                ps.scale_grads(grad_clip / norm);
            }
        }
        self.t += 1;
        for (idx, p) in ps.iter_mut().enumerate() {
            match self.kind {
                OptimizerKind::RmsProp => {
                    let v = &mut self.v[idx];
                    for (c, g) in p.grad.iter().enumerate() {
                        v[c] = RMS_DECAY * v[c] + (1.0 - RMS_DECAY) * g * g;
                        p.value.data_mut()[c] -= self.lr * g / (v[c].sqrt() + RMS_EPS);
                    }
                }
                OptimizerKind::Adam => {
                    let m = &mut self.m[idx];
                    let v = &mut self.v[idx];
                    let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
                    let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
                    for (c, g) in p.grad.iter().enumerate() {
                        m[c] = ADAM_BETA1 * m[c] + (1.0 - ADAM_BETA1) * g;
                        v[c] = ADAM_BETA2 * v[c] + (1.0 - ADAM_BETA2) * g * g;
                        let mh = m[c] / bc1;
                        let vh = v[c] / bc2;
                        p.value.data_mut()[c] -= self.lr * mh / (vh.sqrt() + ADAM_EPS);
                    }
                }
            }
        }
    }
}
