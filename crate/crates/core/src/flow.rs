//! Dimension-preserving 2D normalizing flow over `C×H×W` feature maps.
//!
//! Each block is a [`ChannelMix`] (invertible 1×1 convolution in PLU form)
//! followed by an affine [`CouplingBlock`] whose subnet is a pair of 1×1
//! convolutions. Feature maps are handled per sample as `C × (H·W)` matrices,
//! so a 1×1 convolution is a plain matrix product.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{matmul_raw, Graph, Tensor, Var};

pub const DEFAULT_CLAMP: f64 = 1.9;

#[derive(Clone, Debug, PartialEq)]
pub struct FlowConfig {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub n_blocks: usize,
    pub hidden: usize,
    pub clamp: f64,
}

impl FlowConfig {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        n_blocks: usize,
        hidden_ratio: f64,
    ) -> Result<Self> {
        if channels < 2 {
            return Err(Error::InvalidArgument(format!(
                "flow needs at least 2 channels to split, got {channels}"
            )));
        }
        if n_blocks == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidArgument(
                "flow needs n_blocks, H, W >= 1".into(),
            ));
        }
        if hidden_ratio.is_nan() || hidden_ratio <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "hidden_ratio must be positive, got {hidden_ratio}"
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            n_blocks,
            hidden: ((hidden_ratio * channels as f64).round() as usize).max(1),
            clamp: DEFAULT_CLAMP,
        })
    }

    pub fn spatial(&self) -> usize {
        self.height * self.width
    }

    /// Number of scalar dimensions per sample.
    pub fn dim(&self) -> usize {
        self.channels * self.spatial()
    }
}

/// Invertible channel mixing `W = P·L·(U + diag(sign·exp(log_diag)))`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelMix {
    /// Row `i` of `P·v` is `v[perm[i]]`.
    pub perm: Vec<usize>,
    pub sign: Vec<f64>,
    /// Only the strictly-lower triangle is used.
    pub lower: Tensor,
    /// Only the strictly-upper triangle is used.
    pub upper: Tensor,
    pub log_diag: Tensor,
}

impl ChannelMix {
    pub fn identity(c: usize) -> Self {
        Self {
            perm: (0..c).collect(),
            sign: vec![1.0; c],
            lower: Tensor::zeros(&[c, c]),
            upper: Tensor::zeros(&[c, c]),
            log_diag: Tensor::zeros(&[1, c]),
        }
    }

    pub fn channels(&self) -> usize {
        self.perm.len()
    }

    /// Dense `W` from the current parameters.
    pub fn weight(&self) -> Tensor {
        let c = self.channels();
        let (l, u) = self.triangles();
        let lu = matmul_raw(&l, &u, c, c, c);
        let mut w = vec![0.0; c * c];
        for i in 0..c {
            let src = self.perm[i];
            w[i * c..(i + 1) * c].copy_from_slice(&lu[src * c..(src + 1) * c]);
        }
        Tensor::new(vec![c, c], w).expect("square weight")
    }

    fn triangles(&self) -> (Vec<f64>, Vec<f64>) {
        let c = self.channels();
        let mut l = vec![0.0; c * c];
        let mut u = vec![0.0; c * c];
        for i in 0..c {
            for j in 0..c {
                if j < i {
                    l[i * c + j] = self.lower.data()[i * c + j];
                } else if j > i {
                    u[i * c + j] = self.upper.data()[i * c + j];
                }
            }
            l[i * c + i] = 1.0;
            u[i * c + i] = self.sign[i] * self.log_diag.data()[i].exp();
        }
        (l, u)
    }

    pub fn log_abs_det(&self) -> f64 {
        self.log_diag.data().iter().sum()
    }

    /// Solve `W·x = z` for every column of a `C × N` matrix.
    fn solve(&self, z: &[f64], n: usize) -> Result<Vec<f64>> {
        let c = self.channels();
        let (l, u) = self.triangles();
        if (0..c).any(|i| u[i * c + i] == 0.0 || !u[i * c + i].is_finite()) {
            return Err(Error::Domain {
                op: "channel_mix_inverse",
                detail: "singular mixing matrix".into(),
            });
        }
        // undo P: (P v)[i] = v[perm[i]]
        let mut y = vec![0.0; c * n];
        for i in 0..c {
            let dst = self.perm[i];
            y[dst * n..(dst + 1) * n].copy_from_slice(&z[i * n..(i + 1) * n]);
        }
        // forward substitution with unit-diagonal L
        for i in 0..c {
            for j in 0..i {
                let lij = l[i * c + j];
                if lij != 0.0 {
                    for col in 0..n {
                        y[i * n + col] -= lij * y[j * n + col];
                    }
                }
            }
        }
        // back substitution with U
        for i in (0..c).rev() {
            for j in i + 1..c {
                let uij = u[i * c + j];
                if uij != 0.0 {
                    for col in 0..n {
                        y[i * n + col] -= uij * y[j * n + col];
                    }
                }
            }
            let d = u[i * c + i];
            for col in 0..n {
                y[i * n + col] /= d;
            }
        }
        Ok(y)
    }
}

/// Affine coupling. `parity == 0` transforms the trailing channels conditioned
/// on the leading `⌈C/2⌉`; `parity == 1` does the reverse.
#[derive(Clone, Debug, PartialEq)]
pub struct CouplingBlock {
    pub parity: usize,
    pub channels: usize,
    pub clamp: f64,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl CouplingBlock {
    /// `(conditioner range, transformed range)` as `(start, len)` pairs.
    pub fn split(&self) -> ((usize, usize), (usize, usize)) {
        let head = self.channels.div_ceil(2);
        let tail = self.channels - head;
        if self.parity == 0 {
            ((0, head), (head, tail))
        } else {
            ((head, tail), (0, head))
        }
    }

    fn new(
        channels: usize,
        hidden: usize,
        parity: usize,
        clamp: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut block = Self {
            parity,
            channels,
            clamp,
            w1: Tensor::zeros(&[1, 1]),
            b1: Tensor::zeros(&[1, 1]),
            w2: Tensor::zeros(&[1, 1]),
            b2: Tensor::zeros(&[1, 1]),
        };
        let ((_, n_cond), (_, n_tr)) = block.split();
        let bound = 1.0 / (n_cond as f64).sqrt();
        let w1: Vec<f64> = (0..hidden * n_cond)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        block.w1 = Tensor::new(vec![hidden, n_cond], w1).expect("w1 shape");
        block.b1 = Tensor::zeros(&[hidden, 1]);
        // last layer starts at zero so the block is the identity map
        block.w2 = Tensor::zeros(&[2 * n_tr, hidden]);
        block.b2 = Tensor::zeros(&[2 * n_tr, 1]);
        block
    }

    /// Subnet output `(s, t)` for a conditioner half of width `n` columns, no graph.
    fn scale_shift(&self, cond: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
        let hidden = self.w1.rows();
        let n_cond = self.w1.cols();
        let mut h = matmul_raw(self.w1.data(), cond, hidden, n_cond, n);
        for r in 0..hidden {
            for col in 0..n {
                h[r * n + col] = (h[r * n + col] + self.b1.data()[r]).max(0.0);
            }
        }
        let out_rows = self.w2.rows();
        let mut o = matmul_raw(self.w2.data(), &h, out_rows, hidden, n);
        for r in 0..out_rows {
            for col in 0..n {
                o[r * n + col] += self.b2.data()[r];
            }
        }
        let half = out_rows / 2;
        let t = o.split_off(half * n);
        let a = self.clamp;
        let log_scale = o.iter().map(|&s| a * (s / a).tanh()).collect();
        (log_scale, t)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowModel {
    pub config: FlowConfig,
    pub mixes: Vec<ChannelMix>,
    pub couplings: Vec<CouplingBlock>,
}

/// Graph handles for one registration of a [`FlowModel`].
#[derive(Clone, Debug)]
pub struct FlowVars {
    /// Trainable leaves, in [`FlowModel::parameters`] order.
    pub params: Vec<Var>,
    mix_weights: Vec<Var>,
    mix_logdet: Var,
    ones_row: Var,
}

#[derive(Clone, Debug)]
pub struct FlowOutput {
    /// `B × C × H × W`
    pub z: Tensor,
    /// `log|det ∂z/∂x|` per sample.
    pub logdet: Vec<f64>,
}

impl FlowOutput {
    pub fn batch(&self) -> usize {
        self.logdet.len()
    }

    /// Latent of sample `b` as a `C × H × W` slice.
    pub fn sample(&self, b: usize) -> &[f64] {
        let per = self.z.numel() / self.batch();
        &self.z.data()[b * per..(b + 1) * per]
    }
}

/// Build an identity-initialized flow. Subnet first layers are random, last layers zero.
pub fn init_flow(
    c: usize,
    h: usize,
    w: usize,
    n_blocks: usize,
    hidden_ratio: f64,
    seed: u64,
) -> Result<FlowModel> {
    let config = FlowConfig::new(c, h, w, n_blocks, hidden_ratio)?;
    Ok(FlowModel::from_config(config, seed))
}

impl FlowModel {
    pub fn from_config(config: FlowConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = config.channels;
        let mixes = (0..config.n_blocks)
            .map(|_| ChannelMix::identity(c))
            .collect();
        let couplings = (0..config.n_blocks)
            .map(|k| CouplingBlock::new(c, config.hidden, k % 2, config.clamp, &mut rng))
            .collect();
        Self {
            config,
            mixes,
            couplings,
        }
    }

    /// A flow with every parameter drawn at random, including permutations and
    /// signs. Useful for exercising non-trivial transforms.
    pub fn random(config: FlowConfig, seed: u64, scale: f64) -> Self {
        let mut model = Self::from_config(config, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_f10e);
        let c = model.config.channels;
        for mix in &mut model.mixes {
            for i in (1..c).rev() {
                let j = rng.random_range(0..=i);
                mix.perm.swap(i, j);
            }
            for s in &mut mix.sign {
                *s = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            }
        }
        model.perturb(&mut rng, scale);
        model
    }

    /// Add `N(0, scale²)` noise to every trainable parameter.
    pub fn perturb(&mut self, rng: &mut impl Rng, scale: f64) {
        let normal = Normal::new(0.0, scale).expect("finite scale");
        for p in self.parameters_mut() {
            for v in p.data_mut() {
                *v += normal.sample(rng);
            }
        }
    }

    pub fn parameters(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for (m, c) in self.mixes.iter().zip(&self.couplings) {
            out.extend([&m.lower, &m.upper, &m.log_diag]);
            out.extend([&c.w1, &c.b1, &c.w2, &c.b2]);
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for (m, c) in self.mixes.iter_mut().zip(self.couplings.iter_mut()) {
            out.push(&mut m.lower);
            out.push(&mut m.upper);
            out.push(&mut m.log_diag);
            out.push(&mut c.w1);
            out.push(&mut c.b1);
            out.push(&mut c.w2);
            out.push(&mut c.b2);
        }
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.parameters().iter().map(|p| p.numel()).sum()
    }

    /// Put the parameters on a graph. `trainable` decides whether they become
    /// gradient-tracking leaves or constants.
    pub fn register(&self, g: &mut Graph, trainable: bool) -> Result<FlowVars> {
        let params: Vec<Var> = self
            .parameters()
            .into_iter()
            .map(|p| g.leaf(p.clone(), trainable))
            .collect();
        self.register_with(g, params)
    }

    /// Build the flow on caller-owned parameter nodes, given in
    /// [`FlowModel::parameters`] order with matching shapes.
    pub fn register_with(&self, g: &mut Graph, params: Vec<Var>) -> Result<FlowVars> {
        let own = self.parameters();
        if params.len() != own.len() {
            return Err(Error::InvalidArgument(format!(
                "flow has {} parameter tensors, got {}",
                own.len(),
                params.len()
            )));
        }
        for (&v, p) in params.iter().zip(&own) {
            if g.shape(v) != p.shape() {
                return Err(Error::ShapeMismatch {
                    op: "register_with",
                    left: g.shape(v).to_vec(),
                    right: p.shape().to_vec(),
                });
            }
        }
        let c = self.config.channels;
        let hw = self.config.spatial();
        let mut strict_lower = Tensor::zeros(&[c, c]);
        let mut strict_upper = Tensor::zeros(&[c, c]);
        for i in 0..c {
            for j in 0..c {
                if j < i {
                    strict_lower.data_mut()[i * c + j] = 1.0;
                } else if j > i {
                    strict_upper.data_mut()[i * c + j] = 1.0;
                }
            }
        }
        let lower_mask = g.constant(strict_lower);
        let upper_mask = g.constant(strict_upper);
        let eye = g.constant(Tensor::identity(c));
        let ones_col = g.constant(Tensor::ones(&[c, 1]));

        let mut mix_weights = Vec::with_capacity(self.mixes.len());
        let mut log_diag_sum: Option<Var> = None;
        for (k, mix) in self.mixes.iter().enumerate() {
            let (lower, upper, log_diag) = (params[7 * k], params[7 * k + 1], params[7 * k + 2]);
            let l = g.mul(lower, lower_mask)?;
            let l = g.add(l, eye)?;
            let sign = g.constant(Tensor::new(vec![1, c], mix.sign.clone())?);
            let d = g.exp(log_diag)?;
            let d = g.mul(d, sign)?;
            let rows = g.matmul(ones_col, d)?;
            let diag = g.mul(rows, eye)?;
            let u = g.mul(upper, upper_mask)?;
            let u = g.add(u, diag)?;
            let lu = g.matmul(l, u)?;
            let mut p = Tensor::zeros(&[c, c]);
            for (i, &src) in mix.perm.iter().enumerate() {
                p.data_mut()[i * c + src] = 1.0;
            }
            let p = g.constant(p);
            mix_weights.push(g.matmul(p, lu)?);

            let s = g.sum_all(log_diag)?;
            log_diag_sum = Some(match log_diag_sum {
                Some(acc) => g.add(acc, s)?,
                None => s,
            });
        }
        let total = log_diag_sum.expect("at least one block");
        let mix_logdet = g.scale(total, hw as f64)?;
        let ones_row = g.constant(Tensor::ones(&[1, hw]));
        Ok(FlowVars {
            params,
            mix_weights,
            mix_logdet,
            ones_row,
        })
    }

    /// Forward one sample `x: C × HW` on the graph, returning `(z, logdet)`.
    pub fn forward_sample(&self, g: &mut Graph, vars: &FlowVars, x: Var) -> Result<(Var, Var)> {
        let c = self.config.channels;
        let hw = self.config.spatial();
        if g.shape(x) != [c, hw] {
            return Err(Error::ShapeMismatch {
                op: "flow_forward",
                left: g.shape(x).to_vec(),
                right: vec![c, hw],
            });
        }
        let mut h = x;
        let mut logdet = vars.mix_logdet;
        for (k, block) in self.couplings.iter().enumerate() {
            h = g.matmul(vars.mix_weights[k], h)?;
            let (w1, b1, w2, b2) = (
                vars.params[7 * k + 3],
                vars.params[7 * k + 4],
                vars.params[7 * k + 5],
                vars.params[7 * k + 6],
            );
            let ((cs, cn), (ts, tn)) = block.split();
            let cond = g.slice_rows(h, cs, cn)?;
            let moving = g.slice_rows(h, ts, tn)?;

            let a = g.matmul(w1, cond)?;
            let bias = g.matmul(b1, vars.ones_row)?;
            let a = g.add(a, bias)?;
            let a = g.relu(a)?;
            let o = g.matmul(w2, a)?;
            let bias = g.matmul(b2, vars.ones_row)?;
            let o = g.add(o, bias)?;
            let s = g.slice_rows(o, 0, tn)?;
            let t = g.slice_rows(o, tn, tn)?;
            let alpha = block.clamp;
            let s = g.scale(s, 1.0 / alpha)?;
            let s = g.tanh(s)?;
            let log_scale = g.scale(s, alpha)?;
            let scale = g.exp(log_scale)?;
            let moved = g.mul(moving, scale)?;
            let moved = g.add(moved, t)?;

            h = if block.parity == 0 {
                g.concat_rows(&[cond, moved])?
            } else {
                g.concat_rows(&[moved, cond])?
            };
            let ld = g.sum_all(log_scale)?;
            logdet = g.add(logdet, ld)?;
        }
        Ok((h, logdet))
    }

    fn check_batch(&self, x: &Tensor) -> Result<usize> {
        let cfg = &self.config;
        let shape = x.shape();
        if shape.len() != 4 || shape[1..] != [cfg.channels, cfg.height, cfg.width] {
            return Err(Error::ShapeMismatch {
                op: "flow",
                left: shape.to_vec(),
                right: vec![0, cfg.channels, cfg.height, cfg.width],
            });
        }
        Ok(shape[0])
    }

    /// Batched forward `B×C×H×W → (z, logdet)`.
    pub fn forward(&self, x: &Tensor) -> Result<FlowOutput> {
        let batch = self.check_batch(x)?;
        let (c, hw) = (self.config.channels, self.config.spatial());
        let mut g = Graph::new();
        let vars = self.register(&mut g, false)?;
        let mut z = Vec::with_capacity(x.numel());
        let mut logdet = Vec::with_capacity(batch);
        for b in 0..batch {
            let xs = Tensor::new(vec![c, hw], x.data()[b * c * hw..(b + 1) * c * hw].to_vec())?;
            let xv = g.constant(xs);
            let (zv, ld) = self.forward_sample(&mut g, &vars, xv)?;
            z.extend_from_slice(g.value(zv).data());
            let ld = g.value(ld).item();
            if !ld.is_finite() {
                return Err(Error::NonFinite { op: "flow_forward" });
            }
            logdet.push(ld);
        }
        Ok(FlowOutput {
            z: Tensor::new(x.shape().to_vec(), z)?,
            logdet,
        })
    }

    /// Batched inverse `z → x`.
    pub fn inverse(&self, z: &Tensor) -> Result<Tensor> {
        let batch = self.check_batch(z)?;
        let (c, hw) = (self.config.channels, self.config.spatial());
        let mut out = Vec::with_capacity(z.numel());
        for b in 0..batch {
            let mut h = z.data()[b * c * hw..(b + 1) * c * hw].to_vec();
            for (mix, block) in self.mixes.iter().zip(&self.couplings).rev() {
                let ((cs, cn), (ts, tn)) = block.split();
                let cond = &h[cs * hw..(cs + cn) * hw];
                let (log_scale, t) = block.scale_shift(cond, hw);
                for i in 0..tn * hw {
                    let idx = ts * hw + i;
                    h[idx] = (h[idx] - t[i]) * (-log_scale[i]).exp();
                }
                h = mix.solve(&h, hw)?;
            }
            out.extend(h);
        }
        let x = Tensor::new(z.shape().to_vec(), out)?;
        if !x.is_finite() {
            return Err(Error::NonFinite { op: "flow_inverse" });
        }
        Ok(x)
    }
}

pub fn flow_forward(model: &FlowModel, x: &Tensor) -> Result<FlowOutput> {
    model.forward(x)
}

pub fn flow_inverse(model: &FlowModel, z: &Tensor) -> Result<Tensor> {
    model.inverse(z)
}
