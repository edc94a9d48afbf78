//! Reference implementations shared by the integration suites. Everything
//! here is deliberately naive: it re-derives results the library computes
//! cleverly.

#![allow(dead_code)]

use clflow::flow::{FlowConfig, FlowModel};
use clflow::heads::{
    global_pool, masked_pool, AnomalyMask, BoxRegion, PredictionHead, ProjectionHead,
};
use clflow::losses::{
    cosine, loss_ml, loss_pnd, loss_scf, smoothed_cross_entropy, ContrastiveBatch,
};
use clflow::tensor::{Graph, ReduceOp, Tensor, Var};
use clflow::{Error, Result};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(lo..hi)).collect(),
    )
    .unwrap()
}

/// Values bounded away from zero in magnitude, for ops with a kink or pole at 0.
pub fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(lo..hi);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub type Builder = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

/// A differentiable function of some tensors, reduced to a scalar by a
/// fixed random weighting of its output.
pub struct Case {
    pub name: &'static str,
    pub inputs: Vec<Tensor>,
    pub build: Builder,
}

fn eval_scalar(
    case: &Case,
    inputs: &[Tensor],
    weights: &Option<Tensor>,
    grads: bool,
) -> (f64, Vec<Tensor>) {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = (case.build)(&mut g, &vars).expect("case builds");
    let scalar = match weights {
        Some(w) => {
            let wv = g.constant(w.clone());
            let p = g.mul(out, wv).unwrap();
            g.sum_all(p).unwrap()
        }
        None => out,
    };
    let value = g.value(scalar).item();
    let mut out_grads = Vec::new();
    if grads {
        g.backward(scalar).unwrap();
        out_grads = vars.iter().map(|&v| g.grad(v).unwrap().clone()).collect();
    }
    (value, out_grads)
}

/// Max relative error between autodiff and central differences over every
/// input element; the relative scale is floored at 1e-3.
pub fn fd_max_rel_error(case: &Case, rng: &mut ChaCha8Rng) -> f64 {
    let shape = {
        let mut g = Graph::new();
        let vars: Vec<Var> = case.inputs.iter().map(|t| g.param(t.clone())).collect();
        let out = (case.build)(&mut g, &vars).expect("case builds");
        g.shape(out).to_vec()
    };
    let weights = (!shape.is_empty()).then(|| uniform(rng, &shape, -1.0, 1.0));
    let (_, analytic) = eval_scalar(case, &case.inputs, &weights, true);
    let mut worst: f64 = 0.0;
    for (i, input) in case.inputs.iter().enumerate() {
        for j in 0..input.numel() {
            let mut plus = case.inputs.clone();
            plus[i].data_mut()[j] += FD_STEP;
            let mut minus = case.inputs.clone();
            minus[i].data_mut()[j] -= FD_STEP;
            let fp = eval_scalar(case, &plus, &weights, false).0;
            let fm = eval_scalar(case, &minus, &weights, false).0;
            let numeric = (fp - fm) / (2.0 * FD_STEP);
            let a = analytic[i].data()[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
            worst = worst.max(rel);
        }
    }
    worst
}

fn row(rng: &mut ChaCha8Rng, n: usize) -> Tensor {
    away_from_zero(rng, &[1, n], 0.2, 1.5)
}

/// Every differentiable operation, instantiated with random inputs.
pub fn gradient_cases(rng: &mut ChaCha8Rng) -> Vec<Case> {
    let r = rng.random_range(2..5);
    let c = rng.random_range(2..5);
    let k = rng.random_range(2..4);
    let mut cases: Vec<Case> = Vec::new();
    let mut push = |name: &'static str, inputs: Vec<Tensor>, build: Builder| {
        cases.push(Case {
            name,
            inputs,
            build,
        })
    };

    let a = uniform(rng, &[r, c], -2.0, 2.0);
    let b = uniform(rng, &[r, c], -2.0, 2.0);
    let pos = uniform(rng, &[r, c], 0.3, 3.0);
    let s = uniform(rng, &[], 0.5, 2.0);
    push(
        "add",
        vec![a.clone(), b.clone()],
        Box::new(|g, v| g.add(v[0], v[1])),
    );
    push(
        "sub",
        vec![a.clone(), b.clone()],
        Box::new(|g, v| g.sub(v[0], v[1])),
    );
    push(
        "mul",
        vec![a.clone(), b.clone()],
        Box::new(|g, v| g.mul(v[0], v[1])),
    );
    push(
        "div",
        vec![a.clone(), pos.clone()],
        Box::new(|g, v| g.div(v[0], v[1])),
    );
    push(
        "add_scalar_broadcast",
        vec![a.clone(), s.clone()],
        Box::new(|g, v| g.add(v[0], v[1])),
    );
    push(
        "mul_scalar_broadcast",
        vec![s.clone(), a.clone()],
        Box::new(|g, v| g.mul(v[0], v[1])),
    );
    push(
        "div_by_scalar",
        vec![a.clone(), s.clone()],
        Box::new(|g, v| g.div(v[0], v[1])),
    );
    push("exp", vec![a.clone()], Box::new(|g, v| g.exp(v[0])));
    push("log", vec![pos.clone()], Box::new(|g, v| g.log(v[0])));
    push("tanh", vec![a.clone()], Box::new(|g, v| g.tanh(v[0])));
    let kinked = away_from_zero(rng, &[r, c], 0.05, 2.0);
    push("relu", vec![kinked.clone()], Box::new(|g, v| g.relu(v[0])));
    push("neg", vec![a.clone()], Box::new(|g, v| g.neg(v[0])));
    push("sqrt", vec![pos.clone()], Box::new(|g, v| g.sqrt(v[0])));
    let (sc, sh) = (rng.random_range(-2.0..2.0), rng.random_range(-1.0..1.0));
    push(
        "affine",
        vec![a.clone()],
        Box::new(move |g, v| g.affine(v[0], sc, sh)),
    );
    push(
        "clamp_min",
        vec![kinked.clone()],
        Box::new(|g, v| g.clamp_min(v[0], 0.0)),
    );
    let m = uniform(rng, &[c, k], -2.0, 2.0);
    push(
        "matmul",
        vec![a.clone(), m],
        Box::new(|g, v| g.matmul(v[0], v[1])),
    );
    push(
        "reshape",
        vec![a.clone()],
        Box::new(move |g, v| g.reshape(v[0], &[c, r])),
    );
    push(
        "transpose",
        vec![a.clone()],
        Box::new(|g, v| g.transpose(v[0])),
    );
    push(
        "slice_rows",
        vec![a.clone()],
        Box::new(move |g, v| g.slice_rows(v[0], 1, r - 1)),
    );
    push(
        "concat_rows",
        vec![a.clone(), b.clone()],
        Box::new(|g, v| g.concat_rows(&[v[0], v[1]])),
    );
    push(
        "sum_axis0",
        vec![a.clone()],
        Box::new(|g, v| g.reduce(ReduceOp::Sum, v[0], &[0])),
    );
    push(
        "mean_axis1",
        vec![a.clone()],
        Box::new(|g, v| g.reduce(ReduceOp::Mean, v[0], &[1])),
    );
    // distinct values keep the argmax away from ties
    let distinct = {
        let mut t = uniform(rng, &[r, c], -2.0, 2.0);
        for (i, x) in t.data_mut().iter_mut().enumerate() {
            *x += i as f64 * 0.37;
        }
        t
    };
    push(
        "max_axis1",
        vec![distinct.clone()],
        Box::new(|g, v| g.reduce(ReduceOp::Max, v[0], &[1])),
    );
    push(
        "max_all",
        vec![distinct],
        Box::new(|g, v| g.reduce(ReduceOp::Max, v[0], &[0, 1])),
    );
    push("sum_all", vec![a.clone()], Box::new(|g, v| g.sum_all(v[0])));
    push(
        "mean_all",
        vec![a.clone()],
        Box::new(|g, v| g.mean_all(v[0])),
    );
    let w = uniform(rng, &[r, c], -1.0, 1.0);
    let x = uniform(rng, &[c, 1], -1.0, 1.0);
    push(
        "tanh_of_matmul",
        vec![w, x],
        Box::new(|g, v| {
            let y = g.matmul(v[0], v[1])?;
            g.tanh(y)
        }),
    );

    let (u, t) = (row(rng, c), row(rng, c));
    push("cosine", vec![u, t], Box::new(|g, v| cosine(g, v[0], v[1])));
    let z = uniform(rng, &[c, r], -2.0, 2.0);
    let ld = uniform(rng, &[], -1.0, 1.0);
    push(
        "loss_ml",
        vec![z, ld],
        Box::new(|g, v| loss_ml(g, &[v[0]], &[v[1]])),
    );
    let logits = uniform(rng, &[1, 2], -2.0, 2.0);
    let tau = rng.random_range(0.0..0.5);
    push(
        "smoothed_cross_entropy",
        vec![logits],
        Box::new(move |g, v| smoothed_cross_entropy(g, v[0], 1, tau)),
    );

    // contrastive losses over a K = 2 batch: 5 rows per sample
    let d = c;
    let mut rows: Vec<Tensor> = (0..6).map(|_| row(rng, d)).collect();
    rows.extend((0..4).map(|_| uniform(rng, &[1, 2], -2.0, 2.0)));
    let batch_of = |v: &[Var]| ContrastiveBatch {
        s: vec![v[0], v[1]],
        box_s: vec![v[2], v[3]],
        neg_box_s: vec![v[4], v[5]],
        p: vec![v[6], v[7]],
        neg_p: vec![v[8], v[9]],
    };
    push(
        "loss_pnd",
        rows.clone(),
        Box::new(move |g, v| Ok(loss_pnd(g, &batch_of(v))?.loss)),
    );
    push(
        "loss_scf",
        rows,
        Box::new(move |g, v| loss_scf(g, &batch_of(v), tau)),
    );

    let (h, wd) = (2, 3);
    let zmap = uniform(rng, &[c, h * wd], -2.0, 2.0);
    let mask = AnomalyMask::from_box(
        h,
        wd,
        BoxRegion {
            row0: 0,
            col0: 1,
            height: 2,
            width: 2,
        },
    )
    .unwrap();
    push(
        "masked_pool",
        vec![zmap.clone()],
        Box::new(move |g, v| masked_pool(g, v[0], &mask)),
    );
    push(
        "global_pool",
        vec![zmap],
        Box::new(|g, v| global_pool(g, v[0])),
    );

    let proj_w = [
        uniform(rng, &[c, 3], -1.0, 1.0),
        uniform(rng, &[1, 3], 0.5, 1.0),
        uniform(rng, &[3, 3], -1.0, 1.0),
        uniform(rng, &[1, 3], -1.0, 1.0),
    ];
    let input = row(rng, c);
    let mut inputs = vec![input.clone()];
    inputs.extend(proj_w.iter().cloned());
    push(
        "projection_head",
        inputs,
        Box::new(|g, v| {
            let head = ProjectionHead::from_weights(
                g.value(v[1]).clone(),
                g.value(v[2]).clone(),
                g.value(v[3]).clone(),
                g.value(v[4]).clone(),
            )?;
            let vars = clflow::heads::HeadVars {
                params: v[1..].to_vec(),
            };
            head.forward(g, &vars, v[0])
        }),
    );
    let pred_w = [
        uniform(rng, &[c, c], -1.0, 1.0),
        uniform(rng, &[1, c], -1.0, 1.0),
        uniform(rng, &[c, 2], -1.0, 1.0),
        uniform(rng, &[1, 2], -1.0, 1.0),
    ];
    let mut inputs = vec![input];
    inputs.extend(pred_w.iter().cloned());
    push(
        "prediction_head",
        inputs,
        Box::new(|g, v| {
            let head = PredictionHead::from_weights(
                g.value(v[1]).clone(),
                g.value(v[2]).clone(),
                g.value(v[3]).clone(),
                g.value(v[4]).clone(),
            )?;
            let vars = clflow::heads::HeadVars {
                params: v[1..].to_vec(),
            };
            head.forward(g, &vars, v[0])
        }),
    );

    // the flow, differentiated with respect to its input and every parameter
    let cfg = FlowConfig::new(3, 2, 2, 2, 1.0).unwrap();
    let model = FlowModel::random(cfg, rng.random(), 0.3);
    let x = uniform(rng, &[3, 4], -1.5, 1.5);
    let mut inputs = vec![x];
    inputs.extend(model.parameters().into_iter().cloned());
    push(
        "flow_forward",
        inputs,
        Box::new(move |g, v| {
            let vars = model.register_with(g, v[1..].to_vec())?;
            let (z, ld) = model.forward_sample(g, &vars, v[0])?;
            let z = g.reshape(z, &[12, 1])?;
            let ld = g.reshape(ld, &[1, 1])?;
            g.concat_rows(&[z, ld])
        }),
    );
    cases
}

/// ln|det J| of the flow at `x` from a dense Jacobian assembled by finite
/// differences, one input coordinate at a time.
pub fn brute_force_logdet(model: &FlowModel, x: &[f64], h: f64) -> f64 {
    let cfg = &model.config;
    let d = x.len();
    let shape = vec![1, cfg.channels, cfg.height, cfg.width];
    let f = |x: &[f64]| {
        model
            .forward(&Tensor::new(shape.clone(), x.to_vec()).unwrap())
            .unwrap()
            .z
            .into_data()
    };
    let mut jac = DMatrix::<f64>::zeros(d, d);
    for j in 0..d {
        let mut xp = x.to_vec();
        xp[j] += h;
        let mut xm = x.to_vec();
        xm[j] -= h;
        let (fp, fm) = (f(&xp), f(&xm));
        for i in 0..d {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    jac.determinant().abs().ln()
}

/// Same as [`brute_force_logdet`] but with exact Jacobian rows from reverse
/// mode, one backward pass per output coordinate.
pub fn jacobian_logdet(model: &FlowModel, x: &[f64]) -> f64 {
    let cfg = &model.config;
    let (c, hw) = (cfg.channels, cfg.spatial());
    let d = c * hw;
    let mut jac = DMatrix::<f64>::zeros(d, d);
    let mut g = Graph::new();
    let vars = model.register(&mut g, false).unwrap();
    let xv = g.param(Tensor::new(vec![c, hw], x.to_vec()).unwrap());
    let (z, _) = model.forward_sample(&mut g, &vars, xv).unwrap();
    for i in 0..d {
        let mut e = vec![0.0; d];
        e[i] = 1.0;
        let ev = g.constant(Tensor::new(vec![c, hw], e).unwrap());
        let p = g.mul(z, ev).unwrap();
        let s = g.sum_all(p).unwrap();
        g.zero_grad();
        g.backward(s).unwrap();
        let row = g.grad(xv).unwrap();
        for j in 0..d {
            jac[(i, j)] = row.data()[j];
        }
    }
    jac.determinant().abs().ln()
}

/// Three-block random flow for dense-Jacobian checks. Noise shrinks like
/// 1/sqrt(C) so the triangular mix factors stay well conditioned at wide C.
pub fn conditioned_flow(c: usize, h: usize, w: usize, seed: u64) -> FlowModel {
    let scale = 0.3 * (4.0 / c as f64).sqrt().min(1.0);
    FlowModel::random(FlowConfig::new(c, h, w, 3, 1.0).unwrap(), seed, scale)
}

/// `(wins + ties / 2) / (P·N)` by comparing every positive with every negative.
pub fn pairwise_auroc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let pos: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l)
        .map(|(&s, _)| s)
        .collect();
    let neg: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| !l)
        .map(|(&s, _)| s)
        .collect();
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let (mut wins, mut ties) = (0u64, 0u64);
    for p in &pos {
        for n in &neg {
            if p > n {
                wins += 1;
            } else if p == n {
                ties += 1;
            }
        }
    }
    Some((wins as f64 + 0.5 * ties as f64) / (pos.len() as f64 * neg.len() as f64))
}

/// Random labeled scores; `levels` > 0 draws scores from that many distinct
/// values so ties are common.
pub fn random_scores(rng: &mut ChaCha8Rng, n: usize, levels: u32) -> (Vec<f64>, Vec<bool>) {
    let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
    labels[0] = true;
    labels[n - 1] = false;
    let scores = labels
        .iter()
        .map(|&l| {
            let shift = if l { 0.7 } else { 0.0 };
            if levels > 0 {
                (rng.random_range(0..levels) as f64 + shift).floor()
            } else {
                rng.random_range(0.0..2.0) + shift
            }
        })
        .collect();
    (scores, labels)
}

pub fn is_error<T>(r: &Result<T>, pred: impl Fn(&Error) -> bool) -> bool {
    matches!(r, Err(e) if pred(e))
}

/// Plain rows of a two-sample contrastive batch.
pub struct Rows {
    pub s: [Vec<f64>; 2],
    pub box_s: [Vec<f64>; 2],
    pub neg_box_s: [Vec<f64>; 2],
    pub p: [[f64; 2]; 2],
    pub neg_p: [[f64; 2]; 2],
}

pub fn put(g: &mut Graph, v: &[f64]) -> Var {
    g.constant(Tensor::new(vec![1, v.len()], v.to_vec()).unwrap())
}

pub fn batch(g: &mut Graph, r: &Rows) -> ContrastiveBatch {
    ContrastiveBatch {
        s: r.s.iter().map(|v| put(g, v)).collect(),
        box_s: r.box_s.iter().map(|v| put(g, v)).collect(),
        neg_box_s: r.neg_box_s.iter().map(|v| put(g, v)).collect(),
        p: r.p.iter().map(|v| put(g, v)).collect(),
        neg_p: r.neg_p.iter().map(|v| put(g, v)).collect(),
    }
}

pub fn random_rows(r: &mut ChaCha8Rng) -> Rows {
    let mut v = |n: usize| uniform(r, &[n], -1.0, 1.0).into_data();
    Rows {
        s: [v(4), v(4)],
        box_s: [v(4), v(4)],
        neg_box_s: [v(4), v(4)],
        p: [v(2).try_into().unwrap(), v(2).try_into().unwrap()],
        neg_p: [v(2).try_into().unwrap(), v(2).try_into().unwrap()],
    }
}

/// Plain two-class cross-entropy `−log softmax(l)[class]`.
pub fn cross_entropy(l: [f64; 2], class: usize) -> f64 {
    let m = l[0].max(l[1]);
    let lse = m + ((l[0] - m).exp() + (l[1] - m).exp()).ln();
    lse - l[class]
}
