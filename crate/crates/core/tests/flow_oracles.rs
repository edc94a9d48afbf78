mod common;

use clflow::flow::{init_flow, FlowConfig, FlowModel};
use clflow::losses::{log_px, loss_ml, loss_ml_value};
use clflow::tensor::{Graph, Tensor};
use common::{brute_force_logdet, conditioned_flow, jacobian_logdet, rng, uniform};
use statrs::distribution::{Continuous, Normal};

/// `(C, H, W)` with `C >= 2` and `C·H·W <= 48`.
fn small_shapes() -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    for c in 2..=48 {
        for h in 1..=24 {
            for w in 1..=24 {
                if c * h * w <= 48 {
                    out.push((c, h, w));
                }
            }
        }
    }
    out
}

#[test]
fn eight_block_flows_invert() {
    let mut r = rng(1);
    for seed in 0..10 {
        let cfg = FlowConfig::new(5, 3, 4, 8, 1.0).unwrap();
        let model = FlowModel::random(cfg, seed, 0.2);
        let x = uniform(&mut r, &[2, 5, 3, 4], -3.0, 3.0);
        let back = model.inverse(&model.forward(&x).unwrap().z).unwrap();
        assert!(back.max_abs_diff(&x) < 1e-9);
        let z = uniform(&mut r, &[2, 5, 3, 4], -3.0, 3.0);
        let fwd = model.forward(&model.inverse(&z).unwrap()).unwrap().z;
        assert!(fwd.max_abs_diff(&z) < 1e-9);
    }
}

#[test]
fn logdet_matches_dense_jacobian_on_every_small_shape() {
    let mut r = rng(2);
    let shapes = small_shapes();
    assert!(shapes.len() > 100);
    for (i, &(c, h, w)) in shapes.iter().enumerate() {
        let model = conditioned_flow(c, h, w, i as u64);
        let x = uniform(&mut r, &[1, c, h, w], -2.0, 2.0);
        let analytic = model.forward(&x).unwrap().logdet[0];
        let brute = jacobian_logdet(&model, x.data());
        let rel = (analytic - brute).abs() / analytic.abs().max(1.0);
        assert!(
            rel < 1e-6,
            "{c}x{h}x{w}: analytic {analytic} vs jacobian {brute}"
        );
    }
}

#[test]
fn logdet_matches_finite_difference_jacobian() {
    let mut r = rng(3);
    let cfg = FlowConfig::new(4, 3, 3, 3, 1.0).unwrap();
    for seed in 0..5 {
        let model = FlowModel::random(cfg.clone(), seed, 0.3);
        let x = uniform(&mut r, &[1, 4, 3, 3], -2.0, 2.0);
        let analytic = model.forward(&x).unwrap().logdet[0];
        let brute = brute_force_logdet(&model, x.data(), 1e-5);
        assert!((analytic - brute).abs() / analytic.abs().max(1.0) < 1e-6);
    }
}

#[test]
fn likelihood_loss_is_negative_log_density() {
    let mut r = rng(4);
    let std = Normal::new(0.0, 1.0).unwrap();
    for seed in 0..20 {
        let cfg = FlowConfig::new(3, 2, 4, 4, 1.0).unwrap();
        let model = FlowModel::random(cfg, seed, 0.3);
        let x = uniform(&mut r, &[3, 3, 2, 4], -2.0, 2.0);
        let out = model.forward(&x).unwrap();
        // log p_X via an independent Gaussian density
        let lp: Vec<f64> = (0..3)
            .map(|b| out.sample(b).iter().map(|&z| std.ln_pdf(z)).sum::<f64>() + out.logdet[b])
            .collect();
        let mean_nll = -lp.iter().sum::<f64>() / 3.0;
        assert!((loss_ml_value(&out).unwrap() - mean_nll).abs() < 1e-10 * mean_nll.abs().max(1.0));
        for (a, b) in log_px(&out).unwrap().iter().zip(&lp) {
            assert!((a - b).abs() < 1e-10 * b.abs().max(1.0));
        }

        let mut g = Graph::new();
        let vars = model.register(&mut g, false).unwrap();
        let mut zs = Vec::new();
        let mut lds = Vec::new();
        for b in 0..3 {
            let xb = Tensor::new(vec![3, 8], x.data()[b * 24..(b + 1) * 24].to_vec()).unwrap();
            let xv = g.constant(xb);
            let (z, ld) = model.forward_sample(&mut g, &vars, xv).unwrap();
            zs.push(z);
            lds.push(ld);
        }
        let ml = loss_ml(&mut g, &zs, &lds).unwrap();
        assert!((g.value(ml).item() - mean_nll).abs() < 1e-10 * mean_nll.abs().max(1.0));
    }
}

#[test]
fn fresh_flow_is_identity_with_zero_logdet() {
    let model = init_flow(4, 3, 3, 8, 1.0, 9).unwrap();
    let x = uniform(&mut rng(5), &[2, 4, 3, 3], -2.0, 2.0);
    let out = model.forward(&x).unwrap();
    assert_eq!(out.z, x);
    assert_eq!(out.logdet, vec![0.0, 0.0]);
}
