//! Projection and prediction heads plus masked region pooling.

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Graph, ReduceOp, Tensor, Var};

/// Axis-aligned rectangle `(row0, col0, height, width)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct BoxRegion {
    pub row0: usize,
    pub col0: usize,
    pub height: usize,
    pub width: usize,
}

impl BoxRegion {
    pub fn contains(&self, r: usize, c: usize) -> bool {
        r >= self.row0
            && r < self.row0 + self.height
            && c >= self.col0
            && c < self.col0 + self.width
    }

    pub fn area(&self) -> usize {
        self.height * self.width
    }

    /// Cells of a `stride`-downsampled grid touched by this box: a cell is
    /// covered if any of its pixels is (max-pool rule).
    pub fn downsample(&self, stride: usize) -> BoxRegion {
        let r0 = self.row0 / stride;
        let c0 = self.col0 / stride;
        let r1 = (self.row0 + self.height - 1) / stride;
        let c1 = (self.col0 + self.width - 1) / stride;
        BoxRegion {
            row0: r0,
            col0: c0,
            height: r1 - r0 + 1,
            width: c1 - c0 + 1,
        }
    }
}

/// Binary rectangle mask marking a synthesized defect region.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnomalyMask {
    pub height: usize,
    pub width: usize,
    pub region: BoxRegion,
    bits: Vec<bool>,
}

impl AnomalyMask {
    pub fn from_box(height: usize, width: usize, region: BoxRegion) -> Result<Self> {
        if region.height == 0
            || region.width == 0
            || region.row0 + region.height > height
            || region.col0 + region.width > width
        {
            return Err(Error::InvalidArgument(format!(
                "box {region:?} does not fit a {height}x{width} grid"
            )));
        }
        let bits = (0..height * width)
            .map(|i| region.contains(i / width, i % width))
            .collect();
        Ok(Self {
            height,
            width,
            region,
            bits,
        })
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self::from_box(
            height,
            width,
            BoxRegion {
                row0: 0,
                col0: 0,
                height,
                width,
            },
        )
        .expect("full box fits")
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.bits[r * self.width + c]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn popcount(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Max-pool to a `stride`-downsampled grid of size `⌈H/stride⌉ × ⌈W/stride⌉`.
    pub fn downsample(&self, stride: usize) -> AnomalyMask {
        let h = self.height.div_ceil(stride);
        let w = self.width.div_ceil(stride);
        AnomalyMask::from_box(h, w, self.region.downsample(stride)).expect("downsampled box fits")
    }
}

/// Per-channel mean of `z: C × HW` over the cells where `mask` is set, as a `1 × C` row.
pub fn masked_pool(g: &mut Graph, z: Var, mask: &AnomalyMask) -> Result<Var> {
    let count = mask.popcount();
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    let shape = g.shape(z).to_vec();
    if shape.len() != 2 || shape[1] != mask.height * mask.width {
        return Err(Error::ShapeMismatch {
            op: "masked_pool",
            left: shape,
            right: vec![0, mask.height * mask.width],
        });
    }
    let col: Vec<f64> = mask
        .bits
        .iter()
        .map(|&b| if b { 1.0 } else { 0.0 })
        .collect();
    let m = g.constant(Tensor::new(vec![col.len(), 1], col)?);
    let sums = g.matmul(z, m)?;
    let n = g.constant(Tensor::scalar(count as f64));
    let mean = g.div(sums, n)?;
    g.reshape(mean, &[1, shape[0]])
}

/// Spatial mean of `z: C × HW` as a `1 × C` row.
pub fn global_pool(g: &mut Graph, z: Var) -> Result<Var> {
    let c = g.shape(z)[0];
    let m = g.reduce(ReduceOp::Mean, z, &[1])?;
    g.reshape(m, &[1, c])
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    Tensor::new(vec![rows, cols], data).expect("positive dims")
}

/// Two-layer head on `1 × in` row vectors: `[relu](v·W1 + b1)·W2 + b2`.
#[derive(Debug)]
struct Mlp {
    w1: Tensor,
    b1: Tensor,
    w2: Tensor,
    b2: Tensor,
    accesses: AtomicUsize,
}

impl Clone for Mlp {
    fn clone(&self) -> Self {
        Self {
            w1: self.w1.clone(),
            b1: self.b1.clone(),
            w2: self.w2.clone(),
            b2: self.b2.clone(),
            accesses: AtomicUsize::new(self.accesses.load(Ordering::Relaxed)),
        }
    }
}

impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.w1 == other.w1 && self.b1 == other.b1 && self.w2 == other.w2 && self.b2 == other.b2
    }
}

impl Mlp {
    fn random(input: usize, hidden: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            w1: uniform(rng, input, hidden, input),
            b1: uniform(rng, 1, hidden, input),
            w2: uniform(rng, hidden, output, hidden),
            b2: uniform(rng, 1, output, hidden),
            accesses: AtomicUsize::new(0),
        }
    }

    fn parameters(&self) -> Vec<&Tensor> {
        vec![&self.w1, &self.b1, &self.w2, &self.b2]
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    fn register(&self, g: &mut Graph, trainable: bool) -> HeadVars {
        self.accesses.fetch_add(1, Ordering::Relaxed);
        HeadVars {
            params: self
                .parameters()
                .into_iter()
                .map(|p| g.leaf(p.clone(), trainable))
                .collect(),
        }
    }

    fn apply(&self, g: &mut Graph, vars: &HeadVars, v: Var, rectify: bool) -> Result<Var> {
        self.accesses.fetch_add(1, Ordering::Relaxed);
        let input = self.w1.rows();
        if g.shape(v) != [1, input] {
            return Err(Error::ShapeMismatch {
                op: "head",
                left: g.shape(v).to_vec(),
                right: vec![1, input],
            });
        }
        let p = &vars.params;
        let h = g.matmul(v, p[0])?;
        let h = g.add(h, p[1])?;
        let h = if rectify { g.relu(h)? } else { h };
        let o = g.matmul(h, p[2])?;
        g.add(o, p[3])
    }

    fn apply_plain(&self, v: &[f64], rectify: bool) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let vars = self.register(&mut g, false);
        let x = g.constant(Tensor::new(vec![1, v.len()], v.to_vec())?);
        let y = self.apply(&mut g, &vars, x, rectify)?;
        Ok(g.value(y).data().to_vec())
    }
}

/// Graph handles for one head registration.
#[derive(Clone, Debug)]
pub struct HeadVars {
    pub params: Vec<Var>,
}

/// `linear → ReLU → linear`, `C → C_p → C_p`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionHead(Mlp);

/// Two linear maps `C → C → 2` producing binary logits.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionHead(Mlp);

macro_rules! head_common {
    ($t:ty) => {
        impl $t {
            pub fn parameters(&self) -> Vec<&Tensor> {
                self.0.parameters()
            }

            pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
                self.0.parameters_mut()
            }

            pub fn register(&self, g: &mut Graph, trainable: bool) -> HeadVars {
                self.0.register(g, trainable)
            }

            /// How many times the parameters were put on a graph or applied.
            pub fn access_count(&self) -> usize {
                self.0.accesses.load(Ordering::Relaxed)
            }

            pub fn input_dim(&self) -> usize {
                self.0.w1.rows()
            }

            pub fn output_dim(&self) -> usize {
                self.0.w2.cols()
            }
        }
    };
}

head_common!(ProjectionHead);
head_common!(PredictionHead);

impl ProjectionHead {
    pub fn new(input: usize, proj: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self(Mlp::random(input, proj, proj, &mut rng))
    }

    pub fn from_weights(w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Result<Self> {
        check_layers(&w1, &b1, &w2, &b2)?;
        Ok(Self(Mlp {
            w1,
            b1,
            w2,
            b2,
            accesses: AtomicUsize::new(0),
        }))
    }

    pub fn forward(&self, g: &mut Graph, vars: &HeadVars, v: Var) -> Result<Var> {
        self.0.apply(g, vars, v, true)
    }
}

impl PredictionHead {
    pub fn new(input: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self(Mlp::random(input, input, 2, &mut rng))
    }

    pub fn from_weights(w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Result<Self> {
        check_layers(&w1, &b1, &w2, &b2)?;
        if w2.cols() != 2 {
            return Err(Error::InvalidArgument(
                "prediction head must emit 2 logits".into(),
            ));
        }
        Ok(Self(Mlp {
            w1,
            b1,
            w2,
            b2,
            accesses: AtomicUsize::new(0),
        }))
    }

    pub fn forward(&self, g: &mut Graph, vars: &HeadVars, v: Var) -> Result<Var> {
        self.0.apply(g, vars, v, false)
    }
}

fn check_layers(w1: &Tensor, b1: &Tensor, w2: &Tensor, b2: &Tensor) -> Result<()> {
    let ok = w1.shape().len() == 2
        && w2.shape().len() == 2
        && b1.shape() == [1, w1.cols()]
        && w2.rows() == w1.cols()
        && b2.shape() == [1, w2.cols()];
    if ok {
        Ok(())
    } else {
        Err(Error::ShapeMismatch {
            op: "head_layers",
            left: w1.shape().to_vec(),
            right: w2.shape().to_vec(),
        })
    }
}

/// The pair of heads used by the contrastive objectives.
#[derive(Clone, Debug, PartialEq)]
pub struct Heads {
    pub projection: ProjectionHead,
    pub prediction: PredictionHead,
}

impl Heads {
    pub fn new(channels: usize, proj_dim: usize, seed: u64) -> Self {
        Self {
            projection: ProjectionHead::new(channels, proj_dim, seed),
            prediction: PredictionHead::new(channels, seed.wrapping_add(1)),
        }
    }

    pub fn parameters(&self) -> Vec<&Tensor> {
        let mut out = self.projection.parameters();
        out.extend(self.prediction.parameters());
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.projection.parameters_mut();
        out.extend(self.prediction.parameters_mut());
        out
    }

    pub fn access_count(&self) -> usize {
        self.projection.access_count() + self.prediction.access_count()
    }
}

pub fn project(head: &ProjectionHead, v: &[f64]) -> Result<Vec<f64>> {
    head.0.apply_plain(v, true)
}

pub fn predict(head: &PredictionHead, v: &[f64]) -> Result<[f64; 2]> {
    let out = head.0.apply_plain(v, false)?;
    Ok([out[0], out[1]])
}
