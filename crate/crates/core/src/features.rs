//! Feature sources for the flow: a fixed random-orthogonal convolutional
//! extractor and the `CLFT` binary file format for precomputed maps.
//!
//! `CLFT` layout, little-endian:
//!
//! ```text
//! magic     "CLFT"
//! version   u32        (1)
//! dims      u32 × 3    C, H, W
//! dtype     u8         1 = f32, 2 = f64
//! stride    u32
//! payload   C·H·W values of dtype, row-major
//! crc32     u32        over every preceding byte
//! ```

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Image;
use crate::tensor::{matmul_raw, Tensor};

pub const CLFT_MAGIC: [u8; 4] = *b"CLFT";
pub const CLFT_VERSION: u32 = 1;
const DTYPE_F32: u8 = 1;
const DTYPE_F64: u8 = 2;
const HEADER_LEN: usize = 4 + 4 + 12 + 1 + 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtractorKind {
    Toy,
    File,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractorSpec {
    pub kind: ExtractorKind,
    pub channels: usize,
    pub stride: usize,
    pub seed: u64,
}

impl Default for ExtractorSpec {
    fn default() -> Self {
        Self {
            kind: ExtractorKind::Toy,
            channels: 16,
            stride: 4,
            seed: 7,
        }
    }
}

/// `C × H_f × W_f` feature map, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub stride: usize,
    pub source: String,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        stride: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::DataLength {
                shape: vec![channels, height, width],
                len: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "feature_map" });
        }
        Ok(Self {
            channels,
            height,
            width,
            stride,
            source: "memory".into(),
            data,
        })
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    pub fn expect_shape(&self, expected: [usize; 3]) -> Result<()> {
        if self.shape() == expected {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                op: "features",
                left: self.shape().to_vec(),
                right: expected.to_vec(),
            })
        }
    }

    /// As a `C × (H·W)` matrix.
    pub fn to_matrix(&self) -> Tensor {
        Tensor::new(
            vec![self.channels, self.height * self.width],
            self.data.clone(),
        )
        .expect("consistent shape")
    }

    /// Stack into a `B × C × H × W` batch.
    pub fn batch(maps: &[&FeatureMap]) -> Result<Tensor> {
        let first = maps
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty feature batch".into()))?;
        let mut data = Vec::with_capacity(maps.len() * first.data.len());
        for m in maps {
            m.expect_shape(first.shape())?;
            data.extend_from_slice(&m.data);
        }
        Tensor::new(
            vec![maps.len(), first.channels, first.height, first.width],
            data,
        )
    }
}

/// Rows drawn from a Gaussian and orthonormalized with Gram–Schmidt, in
/// blocks of at most `cols` rows.
fn random_orthogonal(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * cols);
    let mut block: Vec<Vec<f64>> = Vec::new();
    while out.len() < rows * cols {
        if block.len() == cols {
            block.clear();
        }
        let mut v: Vec<f64> = (0..cols).map(|_| StandardNormal.sample(rng)).collect();
        for u in &block {
            let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm < 1e-8 {
            continue;
        }
        v.iter_mut().for_each(|a| *a /= norm);
        out.extend_from_slice(&v);
        block.push(v);
    }
    out
}

/// Fixed two-layer convolutional extractor: 3×3 conv (stride 1) → ReLU →
/// `stride×stride` conv (stride `stride`), then per-channel standardization.
#[derive(Clone, Debug)]
pub struct ToyExtractor {
    spec: ExtractorSpec,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl ToyExtractor {
    pub fn new(spec: &ExtractorSpec) -> Result<Self> {
        if spec.channels < 2 || spec.stride == 0 {
            return Err(Error::InvalidArgument(format!(
                "extractor needs channels >= 2 and stride >= 1, got {} and {}",
                spec.channels, spec.stride
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let c = spec.channels;
        let first = random_orthogonal(c, 27, &mut rng);
        let second = random_orthogonal(c, c * spec.stride * spec.stride, &mut rng);
        Ok(Self {
            spec: spec.clone(),
            first,
            second,
        })
    }

    pub fn spec(&self) -> &ExtractorSpec {
        &self.spec
    }

    pub fn receptive_field(&self) -> usize {
        self.spec.stride + 2
    }

    pub fn extract(&self, img: &Image) -> Result<FeatureMap> {
        let (h, w) = (img.height, img.width);
        let rf = self.receptive_field();
        if h < rf || w < rf {
            return Err(Error::InvalidArgument(format!(
                "image {h}x{w} smaller than the {rf}x{rf} receptive field"
            )));
        }
        let c = self.spec.channels;
        let s = self.spec.stride;

        // im2col for the 3×3 layer on a zero-centered image, zero padding
        let mut cols = vec![0.0; 27 * h * w];
        for r in 0..h {
            for q in 0..w {
                let p = r * w + q;
                for dr in 0..3 {
                    for dq in 0..3 {
                        let (rr, qq) = (r as isize + dr as isize - 1, q as isize + dq as isize - 1);
                        if rr < 0 || qq < 0 || rr >= h as isize || qq >= w as isize {
                            continue;
                        }
                        let px = img.pixel(rr as usize, qq as usize);
                        for ch in 0..3 {
                            cols[(ch * 9 + dr * 3 + dq) * h * w + p] = px[ch] as f64 - 0.5;
                        }
                    }
                }
            }
        }
        let mut hidden = matmul_raw(&self.first, &cols, c, 27, h * w);
        hidden.iter_mut().for_each(|v| *v = v.max(0.0));

        let (hf, wf) = (h.div_ceil(s), w.div_ceil(s));
        let fan = c * s * s;
        let mut patches = vec![0.0; fan * hf * wf];
        for i in 0..hf {
            for j in 0..wf {
                let cell = i * wf + j;
                for ch in 0..c {
                    for dr in 0..s {
                        for dq in 0..s {
                            let (r, q) = (i * s + dr, j * s + dq);
                            if r < h && q < w {
                                patches[((ch * s + dr) * s + dq) * hf * wf + cell] =
                                    hidden[ch * h * w + r * w + q];
                            }
                        }
                    }
                }
            }
        }
        let mut out = matmul_raw(&self.second, &patches, c, fan, hf * wf);
        standardize(&mut out, c, hf * wf);
        let mut map = FeatureMap::new(c, hf, wf, s, out)?;
        map.source = format!("toy:{}", self.spec.seed);
        Ok(map)
    }
}

fn standardize(data: &mut [f64], channels: usize, n: usize) {
    for ch in 0..channels {
        let row = &mut data[ch * n..(ch + 1) * n];
        let mean = row.iter().sum::<f64>() / n as f64;
        row.iter_mut().for_each(|v| *v -= mean);
        let std = (row.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
        if std > 1e-12 {
            row.iter_mut().for_each(|v| *v /= std);
        }
    }
}

pub fn extract_toy(spec: &ExtractorSpec, img: &Image) -> Result<FeatureMap> {
    if spec.kind != ExtractorKind::Toy {
        return Err(Error::InvalidArgument(
            "extract_toy needs a toy extractor spec".into(),
        ));
    }
    ToyExtractor::new(spec)?.extract(img)
}

pub fn encode_features(map: &FeatureMap) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + map.data.len() * 8 + 4);
    buf.extend_from_slice(&CLFT_MAGIC);
    buf.extend_from_slice(&CLFT_VERSION.to_le_bytes());
    for d in map.shape() {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    buf.push(DTYPE_F64);
    buf.extend_from_slice(&(map.stride as u32).to_le_bytes());
    for v in &map.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureMap> {
    if bytes.len() < 4 {
        return Err(Error::Truncated(format!("{} bytes, no magic", bytes.len())));
    }
    let found: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
    if found != CLFT_MAGIC {
        return Err(Error::BadMagic {
            expected: CLFT_MAGIC,
            found,
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated(format!(
            "header needs {HEADER_LEN} bytes, have {}",
            bytes.len()
        )));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let version = u32_at(4);
    if version != CLFT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let (c, h, w) = (u32_at(8) as usize, u32_at(12) as usize, u32_at(16) as usize);
    let dtype = bytes[20];
    let stride = u32_at(21) as usize;
    let width = match dtype {
        DTYPE_F32 => 4,
        DTYPE_F64 => 8,
        other => return Err(Error::UnsupportedDtype(other)),
    };
    let n = c * h * w;
    let expected = HEADER_LEN + n * width + 4;
    if bytes.len() < expected {
        return Err(Error::Truncated(format!(
            "expected {expected} bytes, have {}",
            bytes.len()
        )));
    }
    if bytes.len() > expected {
        return Err(Error::TrailingBytes(bytes.len() - expected));
    }
    let body = &bytes[..expected - 4];
    let stored = u32::from_le_bytes(bytes[expected - 4..].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    let payload = &body[HEADER_LEN..];
    let data: Vec<f64> = if dtype == DTYPE_F64 {
        payload
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect()
    } else {
        payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
            .collect()
    };
    let mut map = FeatureMap::new(c, h, w, stride, data)?;
    map.source = "file".into();
    Ok(map)
}

pub fn save_features(map: &FeatureMap, path: &Path) -> Result<()> {
    std::fs::write(path, encode_features(map))?;
    Ok(())
}

pub fn load_features(path: &Path) -> Result<FeatureMap> {
    if !path.exists() {
        return Err(Error::MissingPath(path.to_path_buf()));
    }
    let mut map = decode_features(&std::fs::read(path)?)?;
    map.source = format!("file:{}", path.display());
    Ok(map)
}
