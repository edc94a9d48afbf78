//! Image datasets on disk and a procedural generator for tests and demos.
//!
//! Directory layout:
//!
//! ```text
//! root/train/good/*.png
//! root/test/good/*.png
//! root/test/defect/*.png
//! root/ground_truth/defect/<stem>_mask.png
//! ```

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{load_mask, save_mask, Image};

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub name: String,
    pub image: Image,
    pub defective: bool,
    /// Pixel ground truth, all false for good images.
    pub mask: Vec<bool>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorSpec {
    pub train: usize,
    pub test: usize,
    pub defect_fraction: f64,
    pub size: usize,
    pub seed: u64,
    /// Defect color as a blend from the object color (0) to full contrast (1).
    pub contrast: f64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            train: 200,
            test: 100,
            defect_fraction: 0.5,
            size: 64,
            seed: 0,
            contrast: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Defect {
    Blob,
    Scratch,
}

/// Textured gray background with a warm disc; optionally a defect painted inside the disc.
fn render(
    size: usize,
    contrast: f64,
    rng: &mut ChaCha8Rng,
    defect: Option<Defect>,
) -> Result<(Image, Vec<bool>)> {
    let noise = Normal::new(0.0, 0.012).expect("valid sigma");
    let half = size as f64 / 2.0;
    let scale = size as f64 / 64.0;
    let base = 0.35 + rng.random_range(-0.03..0.03);
    let (p1, p2) = (
        rng.random_range(0.0..2.0 * PI),
        rng.random_range(0.0..2.0 * PI),
    );
    let disc_rgb = [
        0.78 + rng.random_range(-0.03..0.03),
        0.58 + rng.random_range(-0.03..0.03),
        0.28 + rng.random_range(-0.03..0.03),
    ];
    let radius = rng.random_range(12.0..16.0) * scale;
    let cy = half + rng.random_range(-4.0..4.0) * scale;
    let cx = half + rng.random_range(-4.0..4.0) * scale;

    let mut data = Vec::with_capacity(size * size * 3);
    for r in 0..size {
        for c in 0..size {
            let (y, x) = (r as f64 + 0.5, c as f64 + 0.5);
            let tex = 0.04 * (0.9 * y / scale + p1).sin() * (0.7 * x / scale + p2).sin();
            let bg = base + tex;
            let d = ((y - cy).powi(2) + (x - cx).powi(2)).sqrt();
            let cover = (radius + 0.5 - d).clamp(0.0, 1.0);
            for &disc in &disc_rgb {
                let v = cover * disc + (1.0 - cover) * bg + noise.sample(rng);
                data.push(v.clamp(0.0, 1.0) as f32);
            }
        }
    }
    let mut img = Image::new(size, size, data)?;
    let mut mask = vec![false; size * size];
    let Some(kind) = defect else {
        return Ok((img, mask));
    };

    let dark = rng.random_bool(0.5);
    let target = if dark {
        [0.22, 0.16, 0.12]
    } else {
        [0.30, 0.55, 0.75]
    };
    let color: [f32; 3] =
        std::array::from_fn(|i| (disc_rgb[i] + contrast * (target[i] - disc_rgb[i])) as f32);
    match kind {
        Defect::Blob => {
            let (ry, rx) = (
                rng.random_range(3.0..6.0) * scale,
                rng.random_range(3.0..6.0) * scale,
            );
            let reach = radius - ry.max(rx) - 1.0;
            let (ang, dist) = (
                rng.random_range(0.0..2.0 * PI),
                rng.random_range(0.0..reach.max(0.0)),
            );
            let (by, bx) = (cy + dist * ang.sin(), cx + dist * ang.cos());
            for r in 0..size {
                for c in 0..size {
                    let (y, x) = (r as f64 + 0.5, c as f64 + 0.5);
                    if ((y - by) / ry).powi(2) + ((x - bx) / rx).powi(2) <= 1.0 {
                        img.set_pixel(r, c, color);
                        mask[r * size + c] = true;
                    }
                }
            }
        }
        Defect::Scratch => {
            let len = rng.random_range(10.0..18.0) * scale;
            let ang = rng.random_range(0.0..PI);
            let (dy, dx) = (ang.sin(), ang.cos());
            let reach = radius - len / 2.0 - 2.0;
            let (pa, pd) = (
                rng.random_range(0.0..2.0 * PI),
                rng.random_range(0.0..reach.max(0.0)),
            );
            let (my, mx) = (cy + pd * pa.sin(), cx + pd * pa.cos());
            let thick = 1.2 * scale;
            for r in 0..size {
                for c in 0..size {
                    let (y, x) = (r as f64 + 0.5 - my, c as f64 + 0.5 - mx);
                    let along = y * dy + x * dx;
                    let across = (x * dy - y * dx).abs();
                    if along.abs() <= len / 2.0 && across <= thick {
                        img.set_pixel(r, c, color);
                        mask[r * size + c] = true;
                    }
                }
            }
        }
    }
    Ok((img, mask))
}

/// Deterministic procedural dataset; each image has its own RNG stream.
pub fn generate(spec: &GeneratorSpec) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&spec.defect_fraction) || !(0.0..=1.0).contains(&spec.contrast) {
        return Err(Error::InvalidArgument(
            "defect_fraction and contrast must lie in [0, 1]".into(),
        ));
    }
    let n_defect = (spec.test as f64 * spec.defect_fraction).round() as usize;
    let make = |split: u64, i: usize, defect: Option<Defect>, name: String| -> Result<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream((split << 32) | i as u64);
        let (image, mask) = render(spec.size, spec.contrast, &mut rng, defect)?;
        Ok(Sample {
            name,
            image,
            defective: defect.is_some(),
            mask,
        })
    };
    let train = (0..spec.train)
        .into_par_iter()
        .map(|i| make(0, i, None, format!("{i:04}")))
        .collect::<Result<Vec<_>>>()?;
    let test = (0..spec.test)
        .into_par_iter()
        .map(|i| {
            if i < n_defect {
                let kind = if i % 2 == 0 {
                    Defect::Blob
                } else {
                    Defect::Scratch
                };
                make(1, i, Some(kind), format!("defect_{i:04}"))
            } else {
                make(1, i, None, format!("good_{i:04}"))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { train, test })
}

pub(crate) fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::MissingPath(dir.to_path_buf()));
    }
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "ppm"))
        })
        .collect();
    out.sort();
    Ok(out)
}

pub(crate) fn stem(path: &Path) -> String {
    path.file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or_default()
        .to_string()
}

impl Dataset {
    pub fn save(&self, root: &Path) -> Result<()> {
        for sub in [
            "train/good",
            "test/good",
            "test/defect",
            "ground_truth/defect",
        ] {
            std::fs::create_dir_all(root.join(sub))?;
        }
        for s in &self.train {
            s.image
                .save(&root.join("train/good").join(format!("{}.png", s.name)))?;
        }
        for s in &self.test {
            let class = if s.defective { "defect" } else { "good" };
            s.image.save(
                &root
                    .join("test")
                    .join(class)
                    .join(format!("{}.png", s.name)),
            )?;
            if s.defective {
                let m = root
                    .join("ground_truth/defect")
                    .join(format!("{}_mask.png", s.name));
                save_mask(&s.mask, s.image.height, s.image.width, &m)?;
            }
        }
        Ok(())
    }

    /// Load a dataset directory. `test/` is optional; a defective image
    /// without a ground-truth mask is an error.
    pub fn load(root: &Path) -> Result<Self> {
        if !root.is_dir() {
            return Err(Error::MissingPath(root.to_path_buf()));
        }
        let train = list_pngs(&root.join("train/good"))?
            .par_iter()
            .map(|p| {
                let image = Image::load(p)?;
                Ok(Sample {
                    name: stem(p),
                    mask: vec![false; image.height * image.width],
                    image,
                    defective: false,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut test = Vec::new();
        if root.join("test").is_dir() {
            for class in ["good", "defect"] {
                let dir = root.join("test").join(class);
                if !dir.is_dir() {
                    continue;
                }
                let loaded = list_pngs(&dir)?
                    .par_iter()
                    .map(|p| {
                        let image = Image::load(p)?;
                        let name = stem(p);
                        let defective = class == "defect";
                        let mask = if defective {
                            let m = root
                                .join("ground_truth/defect")
                                .join(format!("{name}_mask.png"));
                            let (bits, h, w) = load_mask(&m)?;
                            if (h, w) != (image.height, image.width) {
                                return Err(Error::ShapeMismatch {
                                    op: "ground_truth",
                                    left: vec![image.height, image.width],
                                    right: vec![h, w],
                                });
                            }
                            bits
                        } else {
                            vec![false; image.height * image.width]
                        };
                        Ok(Sample {
                            name,
                            image,
                            defective,
                            mask,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                test.extend(loaded);
            }
        }
        Ok(Self { train, test })
    }
}
