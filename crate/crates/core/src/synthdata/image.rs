use std::path::Path;

use image::{GrayImage, RgbImage};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const BLOCK_SIZE: usize = 8;

/// Interleaved 8-bit RGB raster whose sides are multiples of [`BLOCK_SIZE`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    height: usize,
    width: usize,
    pixels: Vec<u8>,
}

impl Image {
    pub fn new(height: usize, width: usize, pixels: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 || height % BLOCK_SIZE != 0 || width % BLOCK_SIZE != 0 {
            return Err(Error::Dimension(format!(
                "image {height}x{width} is not a positive multiple of {BLOCK_SIZE}"
            )));
        }
        if pixels.len() != height * width * 3 {
            return Err(Error::Dimension(format!(
                "expected {} bytes for {height}x{width}x3, got {}",
                height * width * 3,
                pixels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [u8; 3]) -> Result<Self> {
        let pixels = rgb.iter().copied().cycle().take(height * width * 3).collect();
        Self::new(height, width, pixels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> u8 {
        self.pixels[(y * self.width + x) * 3 + c]
    }

    pub fn flipped_horizontal(&self) -> Self {
        let mut out = self.pixels.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                let src = (y * self.width + (self.width - 1 - x)) * 3;
                let dst = (y * self.width + x) * 3;
                out[dst..dst + 3].copy_from_slice(&self.pixels[src..src + 3]);
            }
        }
        Self {
            height: self.height,
            width: self.width,
            pixels: out,
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let img = RgbImage::from_raw(self.width as u32, self.height as u32, self.pixels.clone())
            .expect("buffer length checked at construction");
        img.save(path)?;
        Ok(())
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)?.to_rgb8();
        let (w, h) = img.dimensions();
        Self::new(h as usize, w as usize, img.into_raw())
    }
}

/// Per-pixel manipulation flags: 0 pristine, 1 manipulated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthMask {
    height: usize,
    width: usize,
    values: Vec<u8>,
}

impl GroundTruthMask {
    pub fn new(height: usize, width: usize, values: Vec<u8>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::Dimension(format!(
                "mask buffer has {} values for {height}x{width}",
                values.len()
            )));
        }
        if values.iter().any(|&v| v > 1) {
            return Err(Error::Parameter("mask values must be 0 or 1".into()));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            values: vec![0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.values[y * self.width + x]
    }

    pub fn count_nonzero(&self) -> usize {
        self.values.iter().filter(|&&v| v != 0).count()
    }

    pub fn fraction(&self) -> f64 {
        self.count_nonzero() as f64 / self.values.len() as f64
    }

    pub fn flipped_horizontal(&self) -> Self {
        let mut values = self.values.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                values[y * self.width + x] = self.values[y * self.width + self.width - 1 - x];
            }
        }
        Self {
            height: self.height,
            width: self.width,
            values,
        }
    }

    /// Average-pools to `out_h × out_w` cells and re-binarizes at 0.5.
    ///
    /// Source dimensions must be integer multiples of the target.
    pub fn pooled(&self, out_h: usize, out_w: usize) -> Result<Self> {
        if out_h == 0 || out_w == 0 || self.height % out_h != 0 || self.width % out_w != 0 {
            return Err(Error::Dimension(format!(
                "cannot pool {}x{} mask to {out_h}x{out_w}",
                self.height, self.width
            )));
        }
        let (fy, fx) = (self.height / out_h, self.width / out_w);
        let mut values = Vec::with_capacity(out_h * out_w);
        for oy in 0..out_h {
            for ox in 0..out_w {
                let mut sum = 0usize;
                for y in oy * fy..(oy + 1) * fy {
                    for x in ox * fx..(ox + 1) * fx {
                        sum += self.values[y * self.width + x] as usize;
                    }
                }
                values.push(u8::from(sum as f64 / (fy * fx) as f64 > 0.5));
            }
        }
        Ok(Self {
            height: out_h,
            width: out_w,
            values,
        })
    }

    /// Writes a single-channel PNG with values {0, 255}.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let raw = self.values.iter().map(|&v| v * 255).collect();
        let img = GrayImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer length checked at construction");
        img.save(path)?;
        Ok(())
    }

    /// Reads a grayscale mask image and binarizes it at the standard 0.1 level.
    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)?.to_luma8();
        let (w, h) = img.dimensions();
        Ok(super::mask::binarize_mask(
            h as usize,
            w as usize,
            img.as_raw(),
            super::mask::MASK_THRESHOLD,
        ))
    }
}
