//! RGB images in `[0, 1]` and single-channel maps, with PNG/PPM I/O.

use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};

pub const MIN_SIDE: usize = 32;

/// `H × W × 3`, interleaved, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height < MIN_SIDE || width < MIN_SIDE {
            return Err(Error::InvalidArgument(format!(
                "images must be at least {MIN_SIDE}x{MIN_SIDE}, got {height}x{width}"
            )));
        }
        if data.len() != height * width * 3 {
            return Err(Error::DataLength {
                shape: vec![height, width, 3],
                len: data.len(),
            });
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument(
                "image values must lie in [0, 1]".into(),
            ));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Result<Self> {
        let data = (0..height * width).flat_map(|_| rgb).collect();
        Self::new(height, width, data)
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        f: impl Fn(usize, usize) -> [f32; 3],
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * 3);
        for r in 0..height {
            for c in 0..width {
                data.extend(f(r, c).map(|v| v.clamp(0.0, 1.0)));
            }
        }
        Self::new(height, width, data)
    }

    pub fn pixel(&self, r: usize, c: usize) -> [f32; 3] {
        let i = (r * self.width + c) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, r: usize, c: usize, rgb: [f32; 3]) {
        let i = (r * self.width + c) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb.map(|v| v.clamp(0.0, 1.0)));
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Load PNG or PPM; 8-bit channels are divided by 255.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingPath(path.to_path_buf()));
        }
        let img = image::open(path)?.to_rgb8();
        let (w, h) = img.dimensions();
        let data = img.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
        Self::new(h as usize, w as usize, data)
    }

    pub fn to_rgb8(&self) -> RgbImage {
        RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let p = self.pixel(y as usize, x as usize);
            Rgb(p.map(|v| (v * 255.0).round() as u8))
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_rgb8().save(path)?;
        Ok(())
    }

    /// Quantize to 8 bits, as a save/load round trip would.
    pub fn quantized(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .map(|v| (v * 255.0).round() / 255.0)
                .collect(),
        }
    }
}

/// Binary map written as 0/255 single-channel PNG.
pub fn save_mask(bits: &[bool], height: usize, width: usize, path: &Path) -> Result<()> {
    let img = GrayImage::from_fn(width as u32, height as u32, |x, y| {
        Luma([if bits[y as usize * width + x as usize] {
            255
        } else {
            0
        }])
    });
    img.save(path)?;
    Ok(())
}

pub fn load_mask(path: &Path) -> Result<(Vec<bool>, usize, usize)> {
    if !path.exists() {
        return Err(Error::MissingPath(path.to_path_buf()));
    }
    let img = image::open(path)?.to_luma8();
    let (w, h) = img.dimensions();
    Ok((
        img.as_raw().iter().map(|&v| v >= 128).collect(),
        h as usize,
        w as usize,
    ))
}

/// Blend a `[0, 1]`-normalized heat map over an image in a red overlay.
pub fn heatmap_overlay(img: &Image, heat: &[f64]) -> RgbImage {
    let (lo, hi) = heat
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    let span = if hi > lo { hi - lo } else { 1.0 };
    RgbImage::from_fn(img.width as u32, img.height as u32, |x, y| {
        let (r, c) = (y as usize, x as usize);
        let t = ((heat[r * img.width + c] - lo) / span) as f32;
        let p = img.pixel(r, c);
        let mix =
            |base: f32, hot: f32| ((base * (1.0 - 0.5 * t) + hot * 0.5 * t) * 255.0).round() as u8;
        Rgb([mix(p[0], 1.0), mix(p[1], 0.0), mix(p[2], 0.0)])
    })
}
