mod common;

use clflow::dataset::{generate, GeneratorSpec};
use clflow::losses::{cosine_value, loss_pnd, loss_scf, PND_EPS};
use clflow::pipeline::{train, RunConfig};
use clflow::tensor::Graph;
use clflow::Image;
use common::{batch, cross_entropy, random_rows, rng, Rows};
use rand::Rng;

#[test]
fn unsmoothed_classification_loss_is_cross_entropy() {
    let mut r = rng(1);
    for _ in 0..200 {
        let rows = random_rows(&mut r);
        let mut g = Graph::new();
        let b = batch(&mut g, &rows);
        let l = loss_scf(&mut g, &b, 0.0).unwrap();
        let got = g.value(l).item();
        let want = (0..2)
            .map(|i| cross_entropy(rows.neg_p[i], 1) + cross_entropy(rows.p[i], 0))
            .sum::<f64>()
            / 2.0;
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
}

#[test]
fn two_sample_distance_loss_matches_direct_evaluation() {
    let mut r = rng(2);
    for _ in 0..200 {
        let rows = random_rows(&mut r);
        let mut g = Graph::new();
        let b = batch(&mut g, &rows);
        let l = loss_pnd(&mut g, &b).unwrap().loss;
        let got = g.value(l).item();
        let arg = cosine_value(&rows.s[0], &rows.s[1])
            + cosine_value(&rows.s[1], &rows.s[0])
            + (1.0 - cosine_value(&rows.box_s[0], &rows.neg_box_s[0]))
            + (1.0 - cosine_value(&rows.box_s[1], &rows.neg_box_s[1]));
        let want = -arg.max(PND_EPS).ln();
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
}

#[test]
fn distance_loss_hand_cases() {
    let e = |i: usize| {
        let mut v = vec![0.0; 3];
        v[i] = 1.0;
        v
    };
    let rows = |s: [Vec<f64>; 2], b: [Vec<f64>; 2], n: [Vec<f64>; 2]| Rows {
        s,
        box_s: b,
        neg_box_s: n,
        p: [[0.0; 2]; 2],
        neg_p: [[0.0; 2]; 2],
    };
    let value = |r: &Rows| {
        let mut g = Graph::new();
        let b = batch(&mut g, r);
        let l = loss_pnd(&mut g, &b).unwrap().loss;
        g.value(l).item()
    };
    // identical positives, identical box pairs: −ln 2
    let r1 = rows([e(0), e(0)], [e(1), e(1)], [e(1), e(1)]);
    assert!((value(&r1) + 2f64.ln()).abs() < 1e-12);
    // identical positives, orthogonal box pairs: −ln 4
    let r2 = rows([e(0), e(0)], [e(1), e(1)], [e(2), e(2)]);
    assert!((value(&r2) + 4f64.ln()).abs() < 1e-12);
    // opposed positives and identical boxes: argument −2 floors at ε
    let neg0: Vec<f64> = e(0).iter().map(|v| -v).collect();
    let r3 = rows([e(0), neg0], [e(1), e(1)], [e(1), e(1)]);
    assert!((value(&r3) + PND_EPS.ln()).abs() < 1e-12);
}

#[test]
fn distance_loss_falls_as_region_similarity_falls() {
    let mut r = rng(3);
    for _ in 0..100 {
        let mut rows = random_rows(&mut r);
        rows.s = [vec![1.0, 0.5, 0.0, 0.2], vec![0.9, 0.6, 0.1, 0.2]];
        let value = |rows: &Rows| {
            let mut g = Graph::new();
            let b = batch(&mut g, rows);
            let l = loss_pnd(&mut g, &b).unwrap().loss;
            g.value(l).item()
        };
        let before = value(&rows);
        // rotate the negative region vector away from its positive counterpart
        let k = r.random_range(0..2);
        let f0 = cosine_value(&rows.box_s[k], &rows.neg_box_s[k]);
        let away: Vec<f64> = rows.box_s[k]
            .iter()
            .zip(&rows.neg_box_s[k])
            .map(|(b, n)| n - 0.3 * b)
            .collect();
        if cosine_value(&rows.box_s[k], &away) < f0 {
            rows.neg_box_s[k] = away;
            assert!(value(&rows) < before);
        }
    }
}

#[test]
fn autoscaled_weights_match_likelihood_scale_on_first_batch() {
    let data = generate(&GeneratorSpec {
        train: 16,
        test: 0,
        ..Default::default()
    })
    .unwrap();
    let images: Vec<&Image> = data.train.iter().map(|s| &s.image).collect();
    let cfg = RunConfig {
        steps: 1,
        ..Default::default()
    };
    let rep = train(&cfg, &images).unwrap();
    let row = rep.log[0];
    for weighted in [row.lambda1 * row.pnd, row.lambda2 * row.scf] {
        let ratio = weighted.abs() / row.ml.abs();
        assert!((0.1..=10.0).contains(&ratio), "ratio {ratio}");
    }
}
