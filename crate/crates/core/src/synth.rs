//! Foreground-constrained cut-and-paste anomaly synthesis.
//!
//! Foreground comes from frequency-tuned saliency: the distance between the
//! mean Lab color of the image and a lightly blurred Lab image. Patches are
//! cropped from the same image and pasted only where the whole rectangle lies
//! on the foreground; the pasted rectangle is the surrogate anomaly label.

use rand::Rng;

use crate::error::{Error, Result};
use crate::heads::{AnomalyMask, BoxRegion};
use crate::raster::Image;

/// Fraction of the image a kept foreground component must cover.
pub const MIN_COMPONENT_FRACTION: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForegroundMask {
    pub height: usize,
    pub width: usize,
    pub bits: Vec<bool>,
    pub threshold: f64,
    pub components_kept: usize,
    /// No salient object survived; the mask covers the whole image.
    pub fallback: bool,
}

impl ForegroundMask {
    pub fn full(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![true; height * width],
            threshold: 0.0,
            components_kept: 0,
            fallback: true,
        }
    }

    pub fn popcount(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.bits[r * self.width + c]
    }

    pub fn iou(&self, other: &[bool]) -> f64 {
        let inter = self
            .bits
            .iter()
            .zip(other)
            .filter(|(a, b)| **a && **b)
            .count();
        let union = self
            .bits
            .iter()
            .zip(other)
            .filter(|(a, b)| **a || **b)
            .count();
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }
}

fn srgb_to_linear(v: f64) -> f64 {
    if v <= 0.04045 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

fn lab_f(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

/// sRGB in `[0, 1]` to CIE Lab under a D65 white point.
pub fn rgb_to_lab(rgb: [f32; 3]) -> [f64; 3] {
    let [r, g, b] = rgb.map(|v| srgb_to_linear(v as f64));
    let x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
    let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    let z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
    let (fx, fy, fz) = (lab_f(x / 0.95047), lab_f(y), lab_f(z / 1.08883));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// Separable 5×5 binomial blur with edge replication.
fn binomial_blur(plane: &[f64], h: usize, w: usize) -> Vec<f64> {
    const K: [f64; 5] = [1.0, 4.0, 6.0, 4.0, 1.0];
    let at = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            tmp[r * w + c] = (0..5)
                .map(|k| K[k] * plane[r * w + at(c as isize + k as isize - 2, w)])
                .sum::<f64>()
                / 16.0;
        }
    }
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            out[r * w + c] = (0..5)
                .map(|k| K[k] * tmp[at(r as isize + k as isize - 2, h) * w + c])
                .sum::<f64>()
                / 16.0;
        }
    }
    out
}

fn saliency_from_lab(lab: &[[f64; 3]], h: usize, w: usize) -> SaliencyMap {
    if lab.iter().all(|p| *p == lab[0]) {
        return SaliencyMap {
            height: h,
            width: w,
            values: vec![0.0; h * w],
        };
    }
    let n = (h * w) as f64;
    let mut blurred = Vec::with_capacity(3);
    let mut mean = [0.0; 3];
    for ch in 0..3 {
        let plane: Vec<f64> = lab.iter().map(|p| p[ch]).collect();
        mean[ch] = plane.iter().sum::<f64>() / n;
        blurred.push(binomial_blur(&plane, h, w));
    }
    let values = (0..h * w)
        .map(|i| {
            (0..3)
                .map(|ch| (mean[ch] - blurred[ch][i]).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    SaliencyMap {
        height: h,
        width: w,
        values,
    }
}

pub fn ft_saliency(img: &Image) -> SaliencyMap {
    let lab: Vec<[f64; 3]> = (0..img.height * img.width)
        .map(|i| rgb_to_lab(img.pixel(i / img.width, i % img.width)))
        .collect();
    saliency_from_lab(&lab, img.height, img.width)
}

fn morph(bits: &[bool], h: usize, w: usize, dilate: bool) -> Vec<bool> {
    let mut out = vec![false; h * w];
    for r in 0..h {
        for c in 0..w {
            let mut acc = !dilate;
            for dr in -1isize..=1 {
                for dc in -1isize..=1 {
                    let (rr, cc) = (r as isize + dr, c as isize + dc);
                    if rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize {
                        continue;
                    }
                    let v = bits[rr as usize * w + cc as usize];
                    acc = if dilate { acc || v } else { acc && v };
                }
            }
            out[r * w + c] = acc;
        }
    }
    out
}

/// 8-connected components with at least `min_size` pixels.
fn keep_large_components(bits: &[bool], h: usize, w: usize, min_size: usize) -> (Vec<bool>, usize) {
    let mut label = vec![usize::MAX; h * w];
    let mut out = vec![false; h * w];
    let mut kept = 0;
    let mut stack = Vec::new();
    for start in 0..h * w {
        if !bits[start] || label[start] != usize::MAX {
            continue;
        }
        let mut members = Vec::new();
        label[start] = start;
        stack.push(start);
        while let Some(p) = stack.pop() {
            members.push(p);
            let (r, c) = ((p / w) as isize, (p % w) as isize);
            for dr in -1..=1 {
                for dc in -1..=1 {
                    let (rr, cc) = (r + dr, c + dc);
                    if rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize {
                        continue;
                    }
                    let q = rr as usize * w + cc as usize;
                    if bits[q] && label[q] == usize::MAX {
                        label[q] = start;
                        stack.push(q);
                    }
                }
            }
        }
        if members.len() >= min_size {
            kept += 1;
            for p in members {
                out[p] = true;
            }
        }
    }
    (out, kept)
}

/// Threshold at twice the mean saliency, close then open with a 3×3 square,
/// and keep components covering at least 1% of the image. Falls back to the
/// all-ones mask when nothing survives.
pub fn foreground_mask(sal: &SaliencyMap) -> ForegroundMask {
    let (h, w) = (sal.height, sal.width);
    let threshold = 2.0 * sal.values.iter().sum::<f64>() / (h * w) as f64;
    let bits: Vec<bool> = sal.values.iter().map(|&v| v > threshold).collect();
    let closed = morph(&morph(&bits, h, w, true), h, w, false);
    let opened = morph(&morph(&closed, h, w, false), h, w, true);
    let min_size = ((h * w) as f64 * MIN_COMPONENT_FRACTION).ceil() as usize;
    let (bits, kept) = keep_large_components(&opened, h, w, min_size.max(1));
    if kept == 0 {
        return ForegroundMask::full(h, w);
    }
    ForegroundMask {
        height: h,
        width: w,
        bits,
        threshold,
        components_kept: kept,
        fallback: false,
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthesisParams {
    /// Patch area as a fraction of the image area, sampled uniformly.
    pub area_ratio: (f64, f64),
    /// Patch aspect ratio (height / width), sampled log-uniformly.
    pub aspect_ratio: (f64, f64),
    pub max_tries: usize,
    pub shrink: f64,
    /// Uniform per-channel offset bound applied to the patch, if set.
    pub color_jitter: Option<f32>,
    pub feature_stride: usize,
}

impl Default for SynthesisParams {
    fn default() -> Self {
        Self {
            area_ratio: (0.02, 0.15),
            aspect_ratio: (1.0 / 3.0, 3.0),
            max_tries: 1000,
            shrink: 0.8,
            color_jitter: None,
            feature_stride: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthesisResult {
    pub negative: Image,
    /// Box mask at image resolution.
    pub mask: AnomalyMask,
    /// Box mask max-pooled to feature resolution.
    pub feature_mask: AnomalyMask,
    pub region: BoxRegion,
    pub source: (usize, usize),
    pub area_ratio: f64,
    pub aspect_ratio: f64,
    pub jitter: Option<[f32; 3]>,
}

struct Integral {
    w: usize,
    sums: Vec<usize>,
}

impl Integral {
    fn new(bits: &[bool], h: usize, w: usize) -> Self {
        let mut sums = vec![0; (h + 1) * (w + 1)];
        for r in 0..h {
            for c in 0..w {
                sums[(r + 1) * (w + 1) + c + 1] = bits[r * w + c] as usize
                    + sums[r * (w + 1) + c + 1]
                    + sums[(r + 1) * (w + 1) + c]
                    - sums[r * (w + 1) + c];
            }
        }
        Self { w, sums }
    }

    fn count(&self, b: &BoxRegion) -> usize {
        let s = |r: usize, c: usize| self.sums[r * (self.w + 1) + c];
        let (r1, c1) = (b.row0 + b.height, b.col0 + b.width);
        s(r1, c1) + s(b.row0, b.col0) - s(b.row0, c1) - s(r1, b.col0)
    }
}

pub fn cutpaste_plus(
    img: &Image,
    fg: &ForegroundMask,
    rng: &mut impl Rng,
    params: &SynthesisParams,
) -> Result<SynthesisResult> {
    let (h, w) = (img.height, img.width);
    if fg.height != h || fg.width != w {
        return Err(Error::ShapeMismatch {
            op: "cutpaste_plus",
            left: vec![h, w],
            right: vec![fg.height, fg.width],
        });
    }
    let area_ratio = rng.random_range(params.area_ratio.0..=params.area_ratio.1);
    let log_aspect = rng.random_range(params.aspect_ratio.0.ln()..=params.aspect_ratio.1.ln());
    let aspect_ratio = log_aspect.exp();
    let area = area_ratio * (h * w) as f64;
    let mut ph = ((area * aspect_ratio).sqrt().round() as usize).clamp(1, h);
    let mut pw = ((area / aspect_ratio).sqrt().round() as usize).clamp(1, w);
    let src_r = rng.random_range(0..=h - ph);
    let src_c = rng.random_range(0..=w - pw);
    let jitter = params
        .color_jitter
        .map(|j| [0; 3].map(|_| rng.random_range(-j..=j)));

    let integral = Integral::new(&fg.bits, h, w);
    let region = 'search: loop {
        for _ in 0..params.max_tries {
            let cand = BoxRegion {
                row0: rng.random_range(0..=h - ph),
                col0: rng.random_range(0..=w - pw),
                height: ph,
                width: pw,
            };
            if integral.count(&cand) == cand.area() {
                break 'search cand;
            }
        }
        if ph == 1 && pw == 1 {
            return Err(Error::NoPlacement {
                image: format!("{h}x{w} image with {} foreground pixels", fg.popcount()),
            });
        }
        ph = ((ph as f64 * params.shrink) as usize).max(1);
        pw = ((pw as f64 * params.shrink) as usize).max(1);
    };

    let mut negative = img.clone();
    for dr in 0..region.height {
        for dc in 0..region.width {
            let mut p = img.pixel(src_r + dr, src_c + dc);
            if let Some(j) = jitter {
                for ch in 0..3 {
                    p[ch] += j[ch];
                }
            }
            negative.set_pixel(region.row0 + dr, region.col0 + dc, p);
        }
    }
    let mask = AnomalyMask::from_box(h, w, region)?;
    let feature_mask = mask.downsample(params.feature_stride);
    Ok(SynthesisResult {
        negative,
        mask,
        feature_mask,
        region,
        source: (src_r, src_c),
        area_ratio,
        aspect_ratio,
        jitter,
    })
}
