//! Bias-corrected Adam and global-norm gradient clipping.

use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Adam<S> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Tensor<S>>,
    v: Vec<Tensor<S>>,
}

impl<S: Scalar> Adam<S> {
    pub const DEFAULT_LR: f64 = 1e-4;

    pub fn new(store: &ParamStore<S>, lr: f64) -> Self {
        let zeros = || store.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: zeros(), v: zeros() }
    }

    pub fn moments(&self) -> (&[Tensor<S>], &[Tensor<S>]) {
        (&self.m, &self.v)
    }

    pub fn update(&mut self, store: &mut ParamStore<S>, grads: &[Tensor<S>]) {
        assert_eq!(grads.len(), store.len(), "one gradient per parameter");
        self.step += 1;
        let b1 = S::from_f64_lossy(self.beta1);
        let b2 = S::from_f64_lossy(self.beta2);
        let one = S::one();
        let c1 = S::from_f64_lossy(1.0 - self.beta1.powi(self.step as i32));
        let c2 = S::from_f64_lossy(1.0 - self.beta2.powi(self.step as i32));
        let lr = S::from_f64_lossy(self.lr);
        let eps = S::from_f64_lossy(self.eps);
        for (((w, g), m), v) in store
            .tensors_mut()
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for (((wi, &gi), mi), vi) in w
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = b1 * *mi + (one - b1) * gi;
                *vi = b2 * *vi + (one - b2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *wi = *wi - lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<S: Scalar>(grads: &mut [Tensor<S>], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Tensor::sum_squares).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let f = S::from_f64_lossy(max_norm / norm);
        for g in grads.iter_mut() {
            g.scale_in_place(f);
        }
    }
    norm
}
