//! Persistent parameter storage.
//!
//! Tapes are per-forward-pass throwaways; the quantities that survive between
//! passes (weights, biases, their gradient accumulators and optimizer state)
//! live in a [`ParamSet`]. Models hold [`ParamId`]s and bind them onto a tape
//! with [`Tape::param`](super::Tape::param) at the start of each pass.
//!
//! A target network is just a deep clone of the set: ids are stable indices,
//! so the same model struct works against either copy.

use super::Tensor;

/// Index of a parameter inside its [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

/// A named learnable tensor plus its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Vec<f64>,
}

/// An ordered collection of parameters. Order is creation order and is part
/// of the determinism contract (optimizers and checkpoints iterate it).
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    items: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter and returns its stable id.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let grad = vec![0.0; value.numel()];
        self.items.push(Param { name: name.into(), value, grad });
        ParamId(self.items.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.items[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.items[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.items[id.0].grad
    }

    /// Iterates parameters in creation order.
    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.items.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.items.iter_mut()
    }

    /// Looks a parameter up by its registered name.
    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.items.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Zeroes every gradient accumulator.
    pub fn zero_grad(&mut self) {
        for p in &mut self.items {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Adds `g` into the accumulator of `id`.
    pub fn accumulate_grad(&mut self, id: ParamId, g: &[f64]) {
        debug_assert_eq!(self.items[id.0].grad.len(), g.len());
        self.items[id.0].grad.iter_mut().zip(g).for_each(|(a, &b)| *a += b);
    }

    /// Copies every parameter value from `src` (shapes must already agree);
    /// used for target-network synchronization. Gradients are untouched.
    pub fn copy_values_from(&mut self, src: &ParamSet) {
        debug_assert_eq!(self.items.len(), src.items.len());
        for (dst, s) in self.items.iter_mut().zip(&src.items) {
            dst.value = s.value.clone();
        }
    }

    /// Sum of squared gradients over all parameters (for norm clipping).
    pub fn grad_sq_norm(&self) -> f64 {
        self.items.iter().flat_map(|p| p.grad.iter()).map(|g| g * g).sum()
    }

    /// Scales every gradient by `s`.
    pub fn scale_grads(&mut self, s: f64) {
        for p in &mut self.items {
            p.grad.iter_mut().for_each(|g| *g *= s);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;

    #[test]
    fn bound_params_receive_gradients() {
        let mut ps = ParamSet::new();
        let w = ps.add("w", Tensor::from_vec(vec![2.0, 3.0], &[1, 2]).unwrap());
        let mut tape = Tape::new();
        let wv = tape.param(&ps, w);
        let sq = tape.square(wv);
        let loss = tape.sum(sq, None).unwrap();
        tape.backward(loss).unwrap();
        tape.accumulate_param_grads(&mut ps);
        assert_eq!(ps.grad(w), &[4.0, 6.0]);
        // Accumulation is additive until zeroed.
        tape.accumulate_param_grads(&mut ps);
        assert_eq!(ps.grad(w), &[8.0, 12.0]);
        ps.zero_grad();
        assert_eq!(ps.grad(w), &[0.0, 0.0]);
    }

    #[test]
    fn target_copy_leaves_source_untouched() {
        let mut ps = ParamSet::new();
        let w = ps.add("w", Tensor::scalar(1.0));
        let mut target = ps.clone();
        ps.value_mut(w).data_mut()[0] = 5.0;
        assert_eq!(target.value(w).data(), &[1.0]);
        let before = ps.value(w).clone();
        target.copy_values_from(&ps);
        assert_eq!(target.value(w).data(), &[5.0]);
        assert_eq!(ps.value(w), &before);
    }

    #[test]
    fn find_by_name() {
        let mut ps = ParamSet::new();
        let a = ps.add("enc.w", Tensor::scalar(0.0));
        assert_eq!(ps.find("enc.w"), Some(a));
        assert_eq!(ps.find("missing"), None);
    }
}
