//! Training objectives: flow likelihood, positive/negative feature distance,
//! label-smoothed classification, and their weighted sum.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::FlowOutput;
use crate::tensor::{Graph, Tensor, Var};

/// Floor inside the log of the feature-distance loss.
pub const PND_EPS: f64 = 1e-8;
/// Ceiling for autoscaled loss weights.
pub const LAMBDA_CAP: f64 = 1e4;
pub const DEFAULT_TAU: f64 = 0.35;
/// Vectors shorter than this count as zero in [`cosine`].
pub const COSINE_MIN_NORM: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub tau: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 1.0,
            tau: DEFAULT_TAU,
        }
    }
}

/// Per-sample vectors for one batch. Every vector is a `1 × D` row on the
/// graph; logits are `1 × 2`.
#[derive(Clone, Debug)]
pub struct ContrastiveBatch {
    pub s: Vec<Var>,
    pub box_s: Vec<Var>,
    pub neg_box_s: Vec<Var>,
    pub p: Vec<Var>,
    pub neg_p: Vec<Var>,
}

impl ContrastiveBatch {
    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    fn validate(&self) -> Result<usize> {
        let k = self.s.len();
        if [
            self.box_s.len(),
            self.neg_box_s.len(),
            self.p.len(),
            self.neg_p.len(),
        ]
        .iter()
        .any(|&n| n != k)
        {
            return Err(Error::InvalidArgument(
                "contrastive batch collections differ in length".into(),
            ));
        }
        Ok(k)
    }
}

fn half_log_two_pi() -> f64 {
    0.5 * (2.0 * PI).ln()
}

/// Negative log-likelihood per sample, batch-averaged:
/// `½·Σz² − logdet + (d/2)·log 2π`.
pub fn loss_ml(g: &mut Graph, z: &[Var], logdet: &[Var]) -> Result<Var> {
    if z.is_empty() || z.len() != logdet.len() {
        return Err(Error::InvalidArgument(
            "loss_ml needs matching, nonempty z/logdet".into(),
        ));
    }
    let mut terms = Vec::with_capacity(z.len());
    for (&zi, &ld) in z.iter().zip(logdet) {
        let d = g.value(zi).numel() as f64;
        let sq = g.mul(zi, zi)?;
        let sq = g.sum_all(sq)?;
        let half = g.scale(sq, 0.5)?;
        let nll = g.sub(half, ld)?;
        terms.push(g.affine(nll, 1.0, d * half_log_two_pi())?);
    }
    batch_mean(g, &terms)
}

/// `loss_ml` on already-computed flow outputs, without a graph.
pub fn loss_ml_value(out: &FlowOutput) -> Result<f64> {
    let lp = log_px(out)?;
    Ok(-lp.iter().sum::<f64>() / lp.len() as f64)
}

/// `log p_X(x)` per sample under a standard Gaussian latent.
pub fn log_px(out: &FlowOutput) -> Result<Vec<f64>> {
    if !out.z.is_finite() || out.logdet.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "loss_ml" });
    }
    Ok((0..out.batch())
        .map(|b| {
            let z = out.sample(b);
            let d = z.len() as f64;
            let sq: f64 = z.iter().map(|v| v * v).sum();
            -(0.5 * sq - out.logdet[b] + d * half_log_two_pi())
        })
        .collect())
}

fn batch_mean(g: &mut Graph, terms: &[Var]) -> Result<Var> {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = g.add(acc, t)?;
    }
    g.scale(acc, 1.0 / terms.len() as f64)
}

/// Cosine similarity of two row vectors. Inputs with norm below
/// [`COSINE_MIN_NORM`] give a constant 0 with no gradient.
pub fn cosine(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::ShapeMismatch {
            op: "cosine",
            left: g.shape(a).to_vec(),
            right: g.shape(b).to_vec(),
        });
    }
    let norm2 = |t: &Tensor| t.data().iter().map(|v| v * v).sum::<f64>();
    let tiny = COSINE_MIN_NORM * COSINE_MIN_NORM;
    if norm2(g.value(a)) < tiny || norm2(g.value(b)) < tiny {
        return Ok(g.constant(Tensor::scalar(0.0)));
    }
    let ab = g.mul(a, b)?;
    let dot = g.sum_all(ab)?;
    let aa = g.mul(a, a)?;
    let aa = g.sum_all(aa)?;
    let bb = g.mul(b, b)?;
    let bb = g.sum_all(bb)?;
    let prod = g.mul(aa, bb)?;
    let denom = g.sqrt(prod)?;
    g.div(dot, denom)
}

pub fn cosine_value(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum();
    let nb: f64 = b.iter().map(|x| x * x).sum();
    let tiny = COSINE_MIN_NORM * COSINE_MIN_NORM;
    if na < tiny || nb < tiny {
        0.0
    } else {
        dot / (na * nb).sqrt()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct PndLoss {
    pub loss: Var,
    /// The log argument fell below [`PND_EPS`] and was floored.
    pub clamped: bool,
}

/// `−log max(ε, Σ_{i≠j} F(S_i,S_j) + Σ_i [1 − F(Box_s_i, Neg_Box_s_i)])`.
pub fn loss_pnd(g: &mut Graph, batch: &ContrastiveBatch) -> Result<PndLoss> {
    let k = batch.validate()?;
    if k < 2 {
        return Err(Error::InvalidArgument(format!(
            "loss_pnd needs K >= 2, got {k}"
        )));
    }
    let mut terms = Vec::with_capacity(k * k);
    for i in 0..k {
        for j in 0..k {
            if i != j {
                terms.push(cosine(g, batch.s[i], batch.s[j])?);
            }
        }
    }
    for i in 0..k {
        let f = cosine(g, batch.box_s[i], batch.neg_box_s[i])?;
        terms.push(g.affine(f, -1.0, 1.0)?);
    }
    let mut arg = terms[0];
    for &t in &terms[1..] {
        arg = g.add(arg, t)?;
    }
    let clamped = g.value(arg).item() < PND_EPS;
    let floored = g.clamp_min(arg, PND_EPS)?;
    let log = g.log(floored)?;
    Ok(PndLoss {
        loss: g.neg(log)?,
        clamped,
    })
}

/// Cross-entropy of `1 × 2` logits against the smoothed target that puts
/// `1 − τ` on `class` and `τ` on the other class.
pub fn smoothed_cross_entropy(g: &mut Graph, logits: Var, class: usize, tau: f64) -> Result<Var> {
    if g.shape(logits) != [1, 2] || class > 1 {
        return Err(Error::InvalidArgument(
            "smoothed CE expects 1x2 logits and class 0/1".into(),
        ));
    }
    let max = g
        .value(logits)
        .data()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let shifted = g.affine(logits, 1.0, -max)?;
    let e = g.exp(shifted)?;
    let se = g.sum_all(e)?;
    let lse = g.log(se)?;
    let log_p = g.sub(shifted, lse)?;
    let mut target = [tau; 2];
    target[class] = 1.0 - tau;
    let t = g.constant(Tensor::new(vec![1, 2], target.to_vec())?);
    let weighted = g.mul(log_p, t)?;
    let s = g.sum_all(weighted)?;
    g.neg(s)
}

pub fn check_tau(tau: f64) -> Result<()> {
    if (0.0..0.5).contains(&tau) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "label smoothing τ must be in [0, 0.5), got {tau}"
        )))
    }
}

/// Batch mean of `CE^τ(Neg_P_i, 1) + CE^τ(P_i, 0)`.
pub fn loss_scf(g: &mut Graph, batch: &ContrastiveBatch, tau: f64) -> Result<Var> {
    check_tau(tau)?;
    let k = batch.validate()?;
    if k == 0 {
        return Err(Error::InvalidArgument("loss_scf on an empty batch".into()));
    }
    let mut terms = Vec::with_capacity(k);
    for i in 0..k {
        let neg = smoothed_cross_entropy(g, batch.neg_p[i], 1, tau)?;
        let pos = smoothed_cross_entropy(g, batch.p[i], 0, tau)?;
        terms.push(g.add(neg, pos)?);
    }
    batch_mean(g, &terms)
}

/// `ml + λ1·pnd + λ2·scf`.
pub fn total_loss(g: &mut Graph, ml: Var, pnd: Var, scf: Var, w: &LossWeights) -> Result<Var> {
    let a = g.scale(pnd, w.lambda1)?;
    let b = g.scale(scf, w.lambda2)?;
    let t = g.add(ml, a)?;
    g.add(t, b)
}

/// Pick λ1, λ2 so both weighted auxiliary losses start at the magnitude of `ml`.
pub fn autoscale_lambdas(ml: f64, pnd: f64, scf: f64, tau: f64) -> LossWeights {
    let ratio = |aux: f64| {
        if ml == 0.0 {
            1.0
        } else {
            (ml.abs() / aux.abs().max(PND_EPS)).min(LAMBDA_CAP)
        }
    };
    LossWeights {
        lambda1: ratio(pnd),
        lambda2: ratio(scf),
        tau,
    }
}
