mod common;

use std::collections::BTreeMap;

use clflow::losses::total_loss;
use clflow::losses::LossWeights;
use clflow::tensor::{Graph, Tensor};
use common::{fd_max_rel_error, gradient_cases, rng, uniform};

const INSTANCES: usize = 100;

#[test]
fn every_op_matches_central_differences() {
    let mut r = rng(11);
    let mut worst: BTreeMap<&'static str, f64> = BTreeMap::new();
    for _ in 0..INSTANCES {
        for case in gradient_cases(&mut r) {
            let e = fd_max_rel_error(&case, &mut r);
            let w = worst.entry(case.name).or_insert(0.0);
            *w = w.max(e);
        }
    }
    for (name, e) in &worst {
        assert!(*e < 1e-4, "{name}: max relative error {e:e}");
    }
    assert!(worst.len() >= 30, "only {} ops covered", worst.len());
}

#[test]
fn matmul_of_fixed_shapes_is_tight() {
    let mut r = rng(5);
    let a = uniform(&mut r, &[4, 3], -1.0, 1.0);
    let b = uniform(&mut r, &[3, 2], -1.0, 1.0);
    let case = common::Case {
        name: "matmul",
        inputs: vec![a, b],
        build: Box::new(|g, v| g.matmul(v[0], v[1])),
    };
    assert!(fd_max_rel_error(&case, &mut r) < 1e-5);
}

#[test]
fn total_loss_gradient_is_linear_in_its_parts() {
    let mut r = rng(3);
    for _ in 0..20 {
        let x = uniform(&mut r, &[3, 4], -1.0, 1.0);
        let w = LossWeights {
            lambda1: 0.7,
            lambda2: 2.5,
            tau: 0.35,
        };
        let grad_of = |parts: [f64; 3]| {
            let mut g = Graph::new();
            let xv = g.param(x.clone());
            let sq = g.mul(xv, xv).unwrap();
            let ml = g.sum_all(sq).unwrap();
            let t = g.tanh(xv).unwrap();
            let pnd = g.sum_all(t).unwrap();
            let e = g.exp(xv).unwrap();
            let scf = g.mean_all(e).unwrap();
            let out = total_loss(
                &mut g,
                ml,
                pnd,
                scf,
                &LossWeights {
                    lambda1: parts[1],
                    lambda2: parts[2],
                    tau: 0.35,
                },
            )
            .unwrap();
            let out = if parts[0] == 0.0 {
                g.sub(out, ml).unwrap()
            } else {
                out
            };
            g.backward(out).unwrap();
            g.grad(xv).unwrap().clone()
        };
        let whole = grad_of([1.0, w.lambda1, w.lambda2]);
        let ml = grad_of([1.0, 0.0, 0.0]);
        let pnd = grad_of([0.0, 1.0, 0.0]);
        let scf = grad_of([0.0, 0.0, 1.0]);
        let sum: Vec<f64> = (0..12)
            .map(|i| ml.data()[i] + w.lambda1 * pnd.data()[i] + w.lambda2 * scf.data()[i])
            .collect();
        let combined = Tensor::new(vec![3, 4], sum).unwrap();
        assert!(whole.max_abs_diff(&combined) < 1e-10);
    }
}
