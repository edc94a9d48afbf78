//! Anomaly scoring from flow latents and ROC evaluation.

use std::fmt::Write as _;
use std::path::Path;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Max,
    MeanTop1Pct,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoreConfig {
    /// Gaussian smoothing in pixels; 0 disables it.
    pub sigma: f64,
    pub aggregation: Aggregation,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            sigma: 4.0,
            aggregation: Aggregation::Max,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMap {
    pub height: usize,
    pub width: usize,
    /// Smoothed per-pixel scores at image resolution.
    pub pixels: Vec<f64>,
    pub cell_height: usize,
    pub cell_width: usize,
    /// `½·Σ_c z²` per feature cell.
    pub cells: Vec<f64>,
    pub image_score: f64,
}

/// `½·Σ_c z²[c, ·]` for a `C × H × W` latent.
pub fn cell_scores(z: &[f64], channels: usize, cells: usize) -> Vec<f64> {
    let mut out = vec![0.0; cells];
    for c in 0..channels {
        for (o, v) in out.iter_mut().zip(&z[c * cells..(c + 1) * cells]) {
            *o += v * v;
        }
    }
    out.iter_mut().for_each(|v| *v *= 0.5);
    out
}

/// Bilinear sample of a `h × w` grid at continuous cell coordinates, where
/// integer coordinates are cell centers. Coordinates are clamped to the grid.
pub fn bilinear_sample(grid: &[f64], h: usize, w: usize, y: f64, x: f64) -> f64 {
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = (y - y0 as f64, x - x0 as f64);
    let at = |r: usize, c: usize| grid[r * w + c];
    (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x1))
        + fy * ((1.0 - fx) * at(y1, x0) + fx * at(y1, x1))
}

/// Half-pixel-aligned bilinear resize.
pub fn upsample_bilinear(grid: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    let (sy, sx) = (h as f64 / out_h as f64, w as f64 / out_w as f64);
    let mut out = Vec::with_capacity(out_h * out_w);
    for r in 0..out_h {
        let y = (r as f64 + 0.5) * sy - 0.5;
        for c in 0..out_w {
            let x = (c as f64 + 0.5) * sx - 0.5;
            out.push(bilinear_sample(grid, h, w, y, x));
        }
    }
    out
}

/// Separable Gaussian blur truncated at 4σ with edge replication.
pub fn gaussian_smooth(map: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return map.to_vec();
    }
    let radius = (4.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            tmp[r * w + c] = kernel
                .iter()
                .enumerate()
                .map(|(k, wt)| wt * map[r * w + clamp(c as isize + k as isize - radius, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            out[r * w + c] = kernel
                .iter()
                .enumerate()
                .map(|(k, wt)| wt * tmp[clamp(r as isize + k as isize - radius, h) * w + c])
                .sum();
        }
    }
    out
}

fn aggregate(pixels: &[f64], rule: Aggregation) -> f64 {
    match rule {
        Aggregation::Max => pixels.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        Aggregation::MeanTop1Pct => {
            let mut v = pixels.to_vec();
            v.sort_by(|a, b| b.total_cmp(a));
            let k = (v.len() as f64 * 0.01).ceil().max(1.0) as usize;
            v[..k].iter().sum::<f64>() / k as f64
        }
    }
}

/// Score one latent `z: C × H_f × W_f` at image size `out_h × out_w`.
pub fn score_map(
    z: &[f64],
    shape: [usize; 3],
    out_h: usize,
    out_w: usize,
    cfg: &ScoreConfig,
) -> Result<ScoreMap> {
    let [c, hf, wf] = shape;
    if z.len() != c * hf * wf {
        return Err(Error::DataLength {
            shape: shape.to_vec(),
            len: z.len(),
        });
    }
    let cells = cell_scores(z, c, hf * wf);
    let up = upsample_bilinear(&cells, hf, wf, out_h, out_w);
    let pixels = gaussian_smooth(&up, out_h, out_w, cfg.sigma);
    if pixels.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "score_map" });
    }
    let image_score = aggregate(&pixels, cfg.aggregation);
    Ok(ScoreMap {
        height: out_h,
        width: out_w,
        pixels,
        cell_height: hf,
        cell_width: wf,
        cells,
        image_score,
    })
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LabeledScores {
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
}

impl LabeledScores {
    pub fn push(&mut self, score: f64, label: bool) {
        self.scores.push(score);
        self.labels.push(label);
    }

    pub fn extend(&mut self, scores: &[f64], labels: &[bool]) {
        self.scores.extend_from_slice(scores);
        self.labels.extend_from_slice(labels);
    }
}

/// Area under the ROC curve via the Mann–Whitney rank sum with average ranks
/// for ties. Ties between a positive and a negative count one half.
pub fn auroc(ls: &LabeledScores) -> Result<f64> {
    if ls.scores.len() != ls.labels.len() {
        return Err(Error::InvalidArgument(
            "scores and labels differ in length".into(),
        ));
    }
    if ls.scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidArgument("NaN score".into()));
    }
    let n_pos = ls.labels.iter().filter(|&&l| l).count() as u64;
    let n_neg = ls.labels.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass {
            positives: n_pos as usize,
            negatives: n_neg as usize,
        });
    }
    let mut order: Vec<usize> = (0..ls.scores.len()).collect();
    order.sort_by(|&a, &b| ls.scores[a].total_cmp(&ls.scores[b]));

    // twice the positive rank sum keeps average ranks integral
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && ls.scores[order[j]] == ls.scores[order[i]] {
            j += 1;
        }
        let pos_in_group = order[i..j].iter().filter(|&&k| ls.labels[k]).count() as u128;
        twice_rank_sum += pos_in_group * (i as u128 + 1 + j as u128);
        i = j;
    }
    let twice_u = twice_rank_sum - (n_pos as u128) * (n_pos as u128 + 1);
    let u = twice_u as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HistogramConfig {
    pub bins: usize,
    pub range: (f64, f64),
}

impl Default for HistogramConfig {
    fn default() -> Self {
        Self {
            bins: 60,
            range: (-6.0, 6.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub total: u64,
    /// Samples outside the configured range.
    pub outside: u64,
}

impl Histogram {
    pub fn build(samples: &[f64], cfg: &HistogramConfig) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("histogram of zero samples".into()));
        }
        let (lo, hi) = cfg.range;
        if cfg.bins == 0 || hi.is_nan() || lo.is_nan() || hi <= lo {
            return Err(Error::InvalidArgument(
                "histogram needs bins >= 1 and hi > lo".into(),
            ));
        }
        let width = (hi - lo) / cfg.bins as f64;
        let edges = (0..=cfg.bins).map(|i| lo + i as f64 * width).collect();
        let mut counts = vec![0u64; cfg.bins];
        let mut outside = 0;
        for &s in samples {
            if !(s >= lo && s <= hi) {
                outside += 1;
                continue;
            }
            let b = (((s - lo) / width) as usize).min(cfg.bins - 1);
            counts[b] += 1;
        }
        Ok(Self {
            edges,
            counts,
            total: samples.len() as u64,
            outside,
        })
    }

    pub fn density(&self, bin: usize) -> f64 {
        let w = self.edges[bin + 1] - self.edges[bin];
        self.counts[bin] as f64 / (self.total as f64 * w)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_lo,bin_hi,count,density,normal_pdf\n");
        for b in 0..self.counts.len() {
            let mid = 0.5 * (self.edges[b] + self.edges[b + 1]);
            let pdf = (-0.5 * mid * mid).exp() / (2.0 * std::f64::consts::PI).sqrt();
            let _ = writeln!(
                s,
                "{:.6},{:.6},{},{:.8},{:.8}",
                self.edges[b],
                self.edges[b + 1],
                self.counts[b],
                self.density(b),
                pdf
            );
        }
        s
    }

    /// Bar chart of the empirical density with the standard normal density overlaid.
    pub fn render(&self, width: u32, height: u32) -> RgbImage {
        let mut img = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));
        let bins = self.counts.len();
        let peak_normal = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        let peak = (0..bins)
            .map(|b| self.density(b))
            .fold(peak_normal, f64::max)
            * 1.05;
        let plot_h = height as f64 - 1.0;
        for b in 0..bins {
            let x0 = (b as f64 / bins as f64 * width as f64) as u32;
            let x1 = (((b + 1) as f64 / bins as f64 * width as f64) as u32)
                .max(x0 + 1)
                .min(width);
            let bar = (self.density(b) / peak * plot_h) as u32;
            for x in x0..x1.saturating_sub(1).max(x0 + 1).min(width) {
                for y in height.saturating_sub(bar)..height {
                    img.put_pixel(x, y, Rgb([70, 110, 180]));
                }
            }
        }
        let (lo, hi) = (self.edges[0], self.edges[bins]);
        for x in 0..width {
            let v = lo + (x as f64 + 0.5) / width as f64 * (hi - lo);
            let pdf = (-0.5 * v * v).exp() * peak_normal;
            let y = (plot_h - pdf / peak * plot_h).round().clamp(0.0, plot_h) as u32;
            for dy in 0..2 {
                img.put_pixel(x, (y + dy).min(height - 1), Rgb([200, 40, 40]));
            }
        }
        img
    }
}

/// Write a latent-value histogram as CSV plus a PNG plot.
pub fn emit_latent_histogram(
    samples: &[f64],
    cfg: &HistogramConfig,
    csv: &Path,
    png: &Path,
) -> Result<Histogram> {
    let hist = Histogram::build(samples, cfg)?;
    std::fs::write(csv, hist.to_csv())?;
    hist.render(640, 360).save(png)?;
    Ok(hist)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ls(pos: &[f64], neg: &[f64]) -> LabeledScores {
        let mut l = LabeledScores::default();
        pos.iter().for_each(|&s| l.push(s, true));
        neg.iter().for_each(|&s| l.push(s, false));
        l
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&ls(&[0.9, 0.8], &[0.2, 0.1])).unwrap(), 1.0);
        assert_eq!(auroc(&ls(&[0.2, 0.1], &[0.9, 0.8])).unwrap(), 0.0);
        assert_eq!(auroc(&ls(&[1.0], &[1.0, 0.0])).unwrap(), 0.75);
        assert_eq!(auroc(&ls(&[0.5; 3], &[0.5; 4])).unwrap(), 0.5);
    }

    #[test]
    fn auroc_rejects_single_class_and_nan() {
        assert!(matches!(
            auroc(&ls(&[1.0, 2.0], &[])),
            Err(Error::SingleClass { .. })
        ));
        assert!(auroc(&ls(&[f64::NAN], &[0.0])).is_err());
    }

    #[test]
    fn zero_latent_scores_zero() {
        let m = score_map(
            &vec![0.0; 4 * 16],
            [4, 4, 4],
            16,
            16,
            &ScoreConfig::default(),
        )
        .unwrap();
        assert!(m.pixels.iter().all(|&v| v == 0.0));
        assert_eq!(m.image_score, 0.0);
    }

    #[test]
    fn hot_cell_peaks_at_its_center() {
        let (c, hf, wf) = (2, 4, 4);
        let mut z = vec![0.0; c * hf * wf];
        z[5] = 2.0; // channel 0, cell (1, 1)
        z[hf * wf + 5] = 2.0; // channel 1, same cell: Σz² = 8
        let cfg = ScoreConfig {
            sigma: 0.0,
            ..Default::default()
        };
        let m = score_map(&z, [c, hf, wf], 16, 16, &cfg).unwrap();
        assert_eq!(m.cells[5], 4.0);
        assert_eq!(bilinear_sample(&m.cells, hf, wf, 1.0, 1.0), 4.0);
        let argmax = (0..256)
            .max_by(|&a, &b| m.pixels[a].total_cmp(&m.pixels[b]))
            .unwrap();
        assert!((4..8).contains(&(argmax / 16)) && (4..8).contains(&(argmax % 16)));
        assert!(m.image_score <= 4.0 && m.image_score > 3.0);
    }

    #[test]
    fn doubling_latent_quadruples_cell_scores() {
        let z: Vec<f64> = (0..3 * 9).map(|i| (i as f64 * 0.7).sin()).collect();
        let z2: Vec<f64> = z.iter().map(|v| 2.0 * v).collect();
        let a = cell_scores(&z, 3, 9);
        let b = cell_scores(&z2, 3, 9);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(4.0 * x, *y);
        }
    }

    #[test]
    fn smoothing_preserves_constants_and_mass_center() {
        let flat = vec![2.5; 20 * 30];
        let s = gaussian_smooth(&flat, 20, 30, 4.0);
        assert!(s.iter().all(|v| (v - 2.5).abs() < 1e-12));
    }

    #[test]
    fn top_percent_aggregation() {
        let mut pixels = vec![0.0; 200];
        pixels[3] = 10.0;
        pixels[9] = 6.0;
        assert_eq!(aggregate(&pixels, Aggregation::MeanTop1Pct), 8.0);
        assert_eq!(aggregate(&pixels, Aggregation::Max), 10.0);
    }

    #[test]
    fn histogram_contracts() {
        let h = Histogram::build(&[0.3; 50], &HistogramConfig::default()).unwrap();
        assert_eq!(h.counts.iter().filter(|&&c| c > 0).count(), 1);
        assert!(Histogram::build(&[], &HistogramConfig::default()).is_err());
        let a = Histogram::build(&[0.1, -1.0, 7.0], &HistogramConfig::default()).unwrap();
        assert_eq!(a.outside, 1);
        assert_eq!(
            a.to_csv(),
            Histogram::build(&[0.1, -1.0, 7.0], &HistogramConfig::default())
                .unwrap()
                .to_csv()
        );
    }
}
