//! Central finite-difference gradient checking against the reverse-mode
//! sweep. The numeric side only ever calls [`forward`], so it stays
//! independent of the code path it verifies.

use super::{backward, forward, forward_cached, NetworkInstance, ParamStore, Tensor};
use crate::Result;

/// Probe loss: the output contracted with a fixed cotangent, `sum(y * r)`.
pub fn probe_loss(y: &Tensor, cotangent: &Tensor) -> f64 {
    y.data()
        .iter()
        .zip(cotangent.data())
        .map(|(a, b)| a * b)
        .sum()
}

/// Analytic gradients of the probe loss: per-parameter tensors plus the
/// input gradient.
pub fn analytic_grads(
    net: &NetworkInstance,
    store: &ParamStore,
    batch: &Tensor,
    cotangent: &Tensor,
) -> Result<(Vec<Tensor>, Tensor)> {
    let cache = forward_cached(net, store, batch)?;
    backward(net, store, &cache, cotangent)
}

fn loss_at(net: &NetworkInstance, store: &ParamStore, batch: &Tensor, cotangent: &Tensor) -> f64 {
    let (y, _) = forward(net, store, batch, false).expect("forward during gradcheck");
    probe_loss(&y, cotangent)
}

/// Central differences over every parameter scalar.
pub fn fd_param_grads(
    net: &NetworkInstance,
    store: &ParamStore,
    batch: &Tensor,
    cotangent: &Tensor,
    h: f64,
) -> Vec<Tensor> {
    let mut perturbed = store.clone();
    let mut grads = Vec::with_capacity(store.tensors().len());
    for t in 0..store.tensors().len() {
        let mut grad = Tensor::zeros(store.tensors()[t].shape());
        for i in 0..store.tensors()[t].len() {
            let original = store.tensors()[t].data()[i];
            perturbed.tensors_mut()[t].data_mut()[i] = original + h;
            let plus = loss_at(net, &perturbed, batch, cotangent);
            perturbed.tensors_mut()[t].data_mut()[i] = original - h;
            let minus = loss_at(net, &perturbed, batch, cotangent);
            perturbed.tensors_mut()[t].data_mut()[i] = original;
            grad.data_mut()[i] = (plus - minus) / (2.0 * h);
        }
        grads.push(grad);
    }
    grads
}

/// Central differences over every input scalar.
pub fn fd_input_grad(
    net: &NetworkInstance,
    store: &ParamStore,
    batch: &Tensor,
    cotangent: &Tensor,
    h: f64,
) -> Tensor {
    let mut perturbed = batch.clone();
    let mut grad = Tensor::zeros(batch.shape());
    for i in 0..batch.len() {
        let original = batch.data()[i];
        perturbed.data_mut()[i] = original + h;
        let plus = loss_at(net, store, &perturbed, cotangent);
        perturbed.data_mut()[i] = original - h;
        let minus = loss_at(net, store, &perturbed, cotangent);
        perturbed.data_mut()[i] = original;
        grad.data_mut()[i] = (plus - minus) / (2.0 * h);
    }
    grad
}

/// Worst relative disagreement between two gradient vectors. Pairs whose
/// magnitudes both fall below `1e-10` count as matching.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| {
            let scale = a.abs().max(n.abs());
            if scale < 1e-10 {
                0.0
            } else {
                (a - n).abs() / scale
            }
        })
        .fold(0.0, f64::max)
}
