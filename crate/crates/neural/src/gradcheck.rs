//! Central-difference gradient checking against the tape.

use crate::error::Result;
use crate::graph::{Graph, NodeId};
use crate::params::ParamStore;

/// Largest disagreement found, with where it happened.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub checked: usize,
}

/// Denominator floor, relative to `max(1, |loss|)`. Gradients that are
/// structurally zero (a key bias under softmax, say) come back from central
/// differences as rounding noise of order `eps * |loss| / h`, and this floor
/// keeps that noise from reading as a large relative error.
pub const REL_ERR_FLOOR: f64 = 1e-6;

pub fn rel_err(a: f64, b: f64) -> f64 {
    rel_err_scaled(a, b, 1.0)
}

pub fn rel_err_scaled(a: f64, b: f64, loss: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_ERR_FLOOR * loss.abs().max(1.0))
}

/// Compares backprop against `(L(w+h) - L(w-h)) / 2h` for up to
/// `per_tensor` evenly spaced entries of every parameter tensor.
pub fn check_params<F>(store: &ParamStore<f64>, h: f64, per_tensor: usize, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let loss = build(&mut g, store)?;
    let analytic = g.backward(loss)?.for_params(store);
    let loss_value = g.value(loss).data()[0];

    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let l = build(&mut g, s)?;
        Ok(g.value(l).data()[0])
    };

    let mut report = GradCheckReport { max_rel_err: 0.0, worst_param: String::new(), worst_index: 0, checked: 0 };
    let mut work = store.clone();
    for id in store.ids() {
        let n = store.get(id).len();
        let picks = per_tensor.min(n);
        for j in 0..picks {
            let idx = if picks == n { j } else { j * n / picks };
            let orig = store.get(id).data()[idx];
            work.get_mut(id).data_mut()[idx] = orig + h;
            let up = eval(&work)?;
            work.get_mut(id).data_mut()[idx] = orig - h;
            let down = eval(&work)?;
            work.get_mut(id).data_mut()[idx] = orig;
            let numeric = (up - down) / (2.0 * h);
            let e = rel_err_scaled(analytic[id.0].data()[idx], numeric, loss_value);
            report.checked += 1;
            if e > report.max_rel_err {
                report.max_rel_err = e;
                report.worst_param = store.name(id).to_string();
                report.worst_index = idx;
            }
        }
    }
    Ok(report)
}
