//! Finite-difference verification of every differentiable op: analytic
//! gradients against central differences (h = 1e-3, f64) on at least 20
//! random instances per op.

mod common;

use common::{assert_grads_match, random_tensor, random_tensor_away_from, weighted_sum};
use priorlift::rng::Rng;
use priorlift::tensor::{scaled_dot_attention, Graph, Tensor};

const H: f64 = 1e-3;
const TOL: f64 = 1e-3;
const FLOOR: f64 = 1e-4;
const INSTANCES: u64 = 20;

type Node = priorlift::tensor::Node;

fn check_binary(name: &str, sa: &[usize], sb: &[usize], op: fn(&mut Graph<f64>, Node, Node) -> Node) {
    for seed in 0..INSTANCES {
        let mut rng = Rng::seed_from_u64(seed);
        let a = random_tensor(&mut rng, sa, -2.0, 2.0);
        let b = random_tensor_away_from(&mut rng, sb, 2.0, 0.3);
        let out_shape = {
            let mut g = Graph::new();
            let (na, nb) = (g.input(&a), g.input(&b));
            let o = op(&mut g, na, nb);
            g.value(o).shape().to_vec()
        };
        let w = random_tensor(&mut rng, &out_shape, -1.0, 1.0);
        assert_grads_match(
            &[a, b],
            &move |g, nodes| {
                let o = op(g, nodes[0], nodes[1]);
                weighted_sum(g, o, &w)
            },
            H,
            TOL,
            FLOOR,
            name,
        );
    }
}

#[test]
fn grad_add() {
    check_binary("add", &[3, 4], &[3, 4], |g, a, b| g.add(a, b).unwrap());
    check_binary("add broadcast bias", &[2, 3, 4], &[4], |g, a, b| {
        g.add(a, b).unwrap()
    });
}

#[test]
fn grad_sub() {
    check_binary("sub", &[3, 4], &[3, 4], |g, a, b| g.sub(a, b).unwrap());
    check_binary("sub broadcast", &[2, 5], &[1, 5], |g, a, b| {
        g.sub(a, b).unwrap()
    });
}

#[test]
fn grad_mul() {
    check_binary("mul", &[3, 4], &[3, 4], |g, a, b| g.mul(a, b).unwrap());
    check_binary("mul broadcast", &[2, 3, 2], &[3, 1], |g, a, b| {
        g.mul(a, b).unwrap()
    });
}

#[test]
fn grad_div() {
    // Denominator bounded away from zero by the generator.
    check_binary("div", &[3, 4], &[3, 4], |g, a, b| g.div(a, b).unwrap());
    check_binary("div broadcast", &[2, 6, 2], &[2, 6, 1], |g, a, b| {
        g.div(a, b).unwrap()
    });
}

#[test]
fn grad_matmul() {
    check_binary("matmul 3x3", &[3, 3], &[3, 3], |g, a, b| {
        g.matmul(a, b).unwrap()
    });
    check_binary("matmul rect", &[2, 4], &[4, 3], |g, a, b| {
        g.matmul(a, b).unwrap()
    });
    check_binary("matmul batched", &[3, 2, 4], &[3, 4, 2], |g, a, b| {
        g.matmul(a, b).unwrap()
    });
    check_binary("matmul broadcast weights", &[3, 2, 4], &[4, 3], |g, a, b| {
        g.matmul(a, b).unwrap()
    });
}

/// The operation-contract case: gradient of sum(a·b) w.r.t. both operands
/// at random 3x3 inputs.
#[test]
fn grad_sum_of_matmul_matches_fd() {
    for seed in 0..INSTANCES {
        let mut rng = Rng::seed_from_u64(1000 + seed);
        let a = random_tensor(&mut rng, &[3, 3], -1.0, 1.0);
        let b = random_tensor(&mut rng, &[3, 3], -1.0, 1.0);
        assert_grads_match(
            &[a, b],
            &|g, nodes| {
                let prod = g.matmul(nodes[0], nodes[1]).unwrap();
                let flat = g.reshape(prod, vec![9]).unwrap();
                g.sum_axis(flat, 0).unwrap()
            },
            H,
            TOL,
            FLOOR,
            "sum(a·b)",
        );
    }
}

fn check_unary(
    name: &str,
    shape: &[usize],
    sample: fn(&mut Rng, &[usize]) -> Tensor<f64>,
    op: fn(&mut Graph<f64>, Node) -> Node,
) {
    for seed in 0..INSTANCES {
        let mut rng = Rng::seed_from_u64(seed);
        let x = sample(&mut rng, shape);
        let out_shape = {
            let mut g = Graph::new();
            let n = g.input(&x);
            let o = op(&mut g, n);
            g.value(o).shape().to_vec()
        };
        let w = random_tensor(&mut rng, &out_shape, -1.0, 1.0);
        assert_grads_match(
            &[x],
            &move |g, nodes| {
                let o = op(g, nodes[0]);
                weighted_sum(g, o, &w)
            },
            H,
            TOL,
            FLOOR,
            name,
        );
    }
}

fn away(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
    // Inputs at least 0.05 from the kink/branch point so the finite
    // difference does not straddle it.
    random_tensor_away_from(rng, shape, 2.0, 0.05)
}

fn positive(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
    random_tensor(rng, shape, 0.5, 3.0)
}

fn anywhere(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
    random_tensor(rng, shape, -2.0, 2.0)
}

#[test]
fn grad_scalar_ops() {
    check_unary("add_scalar", &[3, 4], anywhere, |g, x| g.add_scalar(x, 1.7));
    check_unary("mul_scalar", &[3, 4], anywhere, |g, x| g.mul_scalar(x, -2.5));
    check_unary("neg", &[3, 4], anywhere, |g, x| g.neg(x));
}

#[test]
fn grad_relu_abs_clamp() {
    check_unary("relu", &[4, 5], away, |g, x| g.relu(x));
    check_unary("abs", &[4, 5], away, |g, x| g.abs(x));
    // clamp_min at 0.5: generator keeps values away from the threshold.
    check_unary("clamp_min", &[4, 5], |rng, s| {
        let t = random_tensor(rng, s, -2.0, 2.0);
        let data: Vec<f64> = t
            .data()
            .iter()
            .map(|&v| if (v - 0.5).abs() < 0.05 { v + 0.2 } else { v })
            .collect();
        Tensor::from_vec(s.to_vec(), data).unwrap()
    }, |g, x| g.clamp_min(x, 0.5));
}

#[test]
fn grad_sqrt_square() {
    check_unary("sqrt", &[3, 4], positive, |g, x| g.sqrt(x));
    check_unary("square", &[3, 4], anywhere, |g, x| g.square(x));
}

#[test]
fn grad_shape_ops() {
    check_unary("transpose_last2", &[2, 3, 4], anywhere, |g, x| {
        g.transpose_last2(x).unwrap()
    });
    check_unary("permute", &[2, 3, 4], anywhere, |g, x| {
        g.permute(x, &[2, 0, 1]).unwrap()
    });
    check_unary("reshape", &[2, 6], anywhere, |g, x| {
        g.reshape(x, vec![3, 4]).unwrap()
    });
    check_unary("slice", &[3, 6], anywhere, |g, x| g.slice(x, 1, 2, 3).unwrap());
    check_unary("index_select", &[5, 3], anywhere, |g, x| {
        g.index_select(x, 0, &[4, 0, 2, 0]).unwrap()
    });
}

#[test]
fn grad_concat() {
    check_binary("concat axis0", &[2, 3], &[4, 3], |g, a, b| {
        g.concat(&[a, b], 0).unwrap()
    });
    check_binary("concat axis1", &[2, 3], &[2, 2], |g, a, b| {
        g.concat(&[a, b], 1).unwrap()
    });
}

#[test]
fn grad_reductions() {
    check_unary("sum_axis", &[3, 4, 2], anywhere, |g, x| {
        g.sum_axis(x, 1).unwrap()
    });
    check_unary("mean_axis", &[3, 4, 2], anywhere, |g, x| {
        g.mean_axis(x, 1).unwrap()
    });
    check_unary("mean_all", &[3, 4], anywhere, |g, x| g.mean_all(x));
    // Norm input kept away from the origin per row.
    check_unary("norm_lastdim", &[4, 3], |rng, s| {
        random_tensor_away_from(rng, s, 2.0, 0.4)
    }, |g, x| g.norm_lastdim(x).unwrap());
}

#[test]
fn grad_softmax() {
    check_unary("softmax", &[4, 5], anywhere, |g, x| {
        g.softmax_lastdim(x).unwrap()
    });
}

#[test]
fn grad_layer_norm() {
    for seed in 0..INSTANCES {
        let mut rng = Rng::seed_from_u64(seed);
        let x = random_tensor(&mut rng, &[3, 6], -2.0, 2.0);
        let gamma = random_tensor(&mut rng, &[6], 0.5, 1.5);
        let beta = random_tensor(&mut rng, &[6], -0.5, 0.5);
        let w = random_tensor(&mut rng, &[3, 6], -1.0, 1.0);
        assert_grads_match(
            &[x, gamma, beta],
            &move |g, nodes| {
                let o = g.layer_norm(nodes[0], nodes[1], nodes[2], 1e-5).unwrap();
                weighted_sum(g, o, &w)
            },
            H,
            TOL,
            FLOOR,
            "layer_norm",
        );
    }
}

/// The operation-contract case: attention gradient on an L=3, d_h=2 instance.
#[test]
fn grad_attention() {
    for seed in 0..INSTANCES {
        let mut rng = Rng::seed_from_u64(seed);
        let q = random_tensor(&mut rng, &[3, 2], -1.0, 1.0);
        let k = random_tensor(&mut rng, &[3, 2], -1.0, 1.0);
        let v = random_tensor(&mut rng, &[3, 2], -1.0, 1.0);
        let w = random_tensor(&mut rng, &[3, 2], -1.0, 1.0);
        assert_grads_match(
            &[q, k, v],
            &move |g, nodes| {
                let o =
                    scaled_dot_attention(g, nodes[0], nodes[1], nodes[2], 0.0, false, None)
                        .unwrap();
                weighted_sum(g, o, &w)
            },
            H,
            TOL,
            FLOOR,
            "scaled_dot_attention",
        );
    }
}

#[test]
fn grad_multihead_attention_batched() {
    for seed in 0..5 {
        let mut rng = Rng::seed_from_u64(seed);
        let q = random_tensor(&mut rng, &[2, 4, 3], -1.0, 1.0);
        let k = random_tensor(&mut rng, &[2, 4, 3], -1.0, 1.0);
        let v = random_tensor(&mut rng, &[2, 4, 3], -1.0, 1.0);
        let w = random_tensor(&mut rng, &[2, 4, 3], -1.0, 1.0);
        assert_grads_match(
            &[q, k, v],
            &move |g, nodes| {
                let o =
                    scaled_dot_attention(g, nodes[0], nodes[1], nodes[2], 0.0, false, None)
                        .unwrap();
                weighted_sum(g, o, &w)
            },
            H,
            TOL,
            FLOOR,
            "attention batched",
        );
    }
}

#[test]
fn grad_dropout_with_fixed_mask() {
    // Same RNG seed per rebuild keeps the mask identical, so the sampled
    // function is differentiable and the oracle applies.
    for seed in 0..INSTANCES {
        let mut rng = Rng::seed_from_u64(seed);
        let x = random_tensor(&mut rng, &[4, 5], -2.0, 2.0);
        let w = random_tensor(&mut rng, &[4, 5], -1.0, 1.0);
        assert_grads_match(
            &[x],
            &move |g, nodes| {
                let mut mask_rng = Rng::seed_from_u64(99);
                let o = g.dropout(nodes[0], 0.3, &mut mask_rng).unwrap();
                weighted_sum(g, o, &w)
            },
            H,
            TOL,
            FLOOR,
            "dropout",
        );
    }
}

/// Hand-built three-node diamond: one tensor feeding two consumers receives
/// the sum of both path gradients.
#[test]
fn grad_two_consumer_diamond_matches_fd() {
    for seed in 0..INSTANCES {
        let mut rng = Rng::seed_from_u64(seed);
        let x = random_tensor(&mut rng, &[3], 0.5, 2.0);
        assert_grads_match(
            &[x],
            &|g, nodes| {
                let a = g.square(nodes[0]);
                let b = g.sqrt(nodes[0]);
                let s = g.add(a, b).unwrap();
                g.mean_all(s)
            },
            H,
            TOL,
            FLOOR,
            "diamond",
        );
    }
}
