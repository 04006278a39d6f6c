//! Plain (tape-free) scaled dot-product attention on `[tokens, d_k]` inputs.

use crate::error::{NnError, Result};
use crate::graph::Graph;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `softmax(Q K^T / sqrt(d_k)) V` for a single head.
pub fn attention<S: Scalar>(q: &Tensor<S>, k: &Tensor<S>, v: &Tensor<S>) -> Result<Tensor<S>> {
    let (n, d) = q.as_matrix();
    if k.as_matrix() != (n, d) || v.as_matrix() != (n, d) {
        return Err(NnError::Shape(format!(
            "attention expects equal [tokens, d_k] inputs, got {:?} {:?} {:?}",
            q.shape(),
            k.shape(),
            v.shape()
        )));
    }
    let mut g = Graph::new();
    let (qn, kn, vn) = (g.input(q.clone()), g.input(k.clone()), g.input(v.clone()));
    let out = g.attention(qn, kn, vn, 1, n, 1)?;
    Ok(g.value(out).clone())
}
