//! Shared test oracles: central finite differences against analytic
//! gradients. Kept independent of the graph's backward implementation —
//! numeric gradients come only from re-evaluating the forward pass.

#![allow(dead_code)]

use priorlift::rng::Rng;
use priorlift::tensor::{Graph, Node, Real, Tensor};

/// Builds the scalar loss from leaf nodes bound to the given tensors.
pub type LossBuilder = dyn Fn(&mut Graph<f64>, &[Node]) -> Node;

/// Relative error with an absolute floor so near-zero gradients are judged
/// on absolute agreement instead of blowing up the quotient.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Analytic gradients of `build`'s loss with respect to every input tensor.
pub fn analytic_grads(inputs: &[Tensor<f64>], build: &LossBuilder) -> Vec<Tensor<f64>> {
    let mut g = Graph::new();
    let nodes: Vec<Node> = inputs.iter().map(|t| g.param(t)).collect();
    let loss = build(&mut g, &nodes);
    let mut grads = g.backward(loss).expect("backward");
    nodes
        .iter()
        .zip(inputs)
        .map(|(&n, t)| {
            grads
                .take(n)
                .unwrap_or_else(|| Tensor::zeros(t.shape().to_vec()))
        })
        .collect()
}

/// Loss value at the given inputs (fresh graph per call).
pub fn eval_loss(inputs: &[Tensor<f64>], build: &LossBuilder) -> f64 {
    let mut g = Graph::new();
    let nodes: Vec<Node> = inputs.iter().map(|t| g.input(t)).collect();
    let loss = build(&mut g, &nodes);
    g.value(loss).item()
}

/// Central finite difference for one element of one input.
pub fn numeric_grad_at(
    inputs: &[Tensor<f64>],
    build: &LossBuilder,
    tensor_idx: usize,
    elem_idx: usize,
    h: f64,
) -> f64 {
    let mut plus = inputs.to_vec();
    plus[tensor_idx].data_mut()[elem_idx] += h;
    let mut minus = inputs.to_vec();
    minus[tensor_idx].data_mut()[elem_idx] -= h;
    (eval_loss(&plus, build) - eval_loss(&minus, build)) / (2.0 * h)
}

/// Check every element of every input against central differences.
pub fn assert_grads_match(
    inputs: &[Tensor<f64>],
    build: &LossBuilder,
    h: f64,
    tol: f64,
    floor: f64,
    what: &str,
) {
    let analytic = analytic_grads(inputs, build);
    for (ti, grad) in analytic.iter().enumerate() {
        for ei in 0..grad.numel() {
            let numeric = numeric_grad_at(inputs, build, ti, ei, h);
            let a = grad.data()[ei];
            let err = rel_err(a, numeric, floor);
            assert!(
                err < tol,
                "{what}: input {ti} elem {ei}: analytic {a:.6e} vs numeric {numeric:.6e} (rel err {err:.2e})"
            );
        }
    }
}

/// Random tensor with entries in `[lo, hi)`.
pub fn random_tensor(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.uniform_range(lo, hi)).collect();
    Tensor::from_vec(shape.to_vec(), data).unwrap()
}

/// Random tensor bounded away from zero (for kinked ops like relu/abs).
pub fn random_tensor_away_from(
    rng: &mut Rng,
    shape: &[usize],
    scale: f64,
    min_abs: f64,
) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|_| {
            let sign = if rng.uniform() < 0.5 { -1.0 } else { 1.0 };
            sign * rng.uniform_range(min_abs, scale)
        })
        .collect();
    Tensor::from_vec(shape.to_vec(), data).unwrap()
}

/// Generic scalarizer: weighted sum of all elements with fixed random
/// weights, so asymmetric Jacobian errors cannot cancel.
pub fn weighted_sum<F: Real>(g: &mut Graph<F>, out: Node, weights: &Tensor<F>) -> Node {
    let w = g.input(weights);
    let prod = g.mul(out, w).expect("weight shape matches output");
    let flat_len = g.value(prod).numel();
    let flat = g.reshape(prod, vec![flat_len]).expect("flatten");
    g.sum_axis(flat, 0).expect("sum")
}
