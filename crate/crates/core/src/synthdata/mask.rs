//! Mask binarization and the enlarged-crop preprocessing shared by images and
//! their masks.

use image::imageops::{self, FilterType};
use image::{GrayImage, RgbImage};
use serde::{Deserialize, Serialize};

use super::image::{GroundTruthMask, Image};
use crate::{Error, Result};

pub const MASK_THRESHOLD: f64 = 0.1;
pub const CROP_FACTOR: f64 = 1.3;

/// `out = 1` iff `gray / 255 > threshold`.
pub fn binarize_mask(height: usize, width: usize, gray: &[u8], threshold: f64) -> GroundTruthMask {
    assert_eq!(gray.len(), height * width, "mask buffer size");
    let values = gray
        .iter()
        .map(|&v| u8::from(f64::from(v) / 255.0 > threshold))
        .collect();
    GroundTruthMask::new(height, width, values).expect("binary values")
}

/// Axis-aligned pixel box `(x, y, w, h)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

/// Crop rectangle `[x0, x1) × [y0, y1)` after enlargement and clamping.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropRect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl CropRect {
    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }
}

/// Enlarges `bbox` about its center by `factor` and clamps to the image.
pub fn crop_rect(img_w: usize, img_h: usize, bbox: BBox, factor: f64) -> Result<CropRect> {
    if bbox.w == 0 || bbox.h == 0 {
        return Err(Error::Parameter("empty bounding box".into()));
    }
    if !(factor >= 1.0 && factor.is_finite()) {
        return Err(Error::Parameter(format!("crop factor {factor} must be >= 1")));
    }
    if bbox.x + bbox.w > img_w || bbox.y + bbox.h > img_h {
        return Err(Error::Parameter(format!(
            "bounding box {bbox:?} exceeds {img_w}x{img_h} image"
        )));
    }
    let cx = bbox.x as f64 + bbox.w as f64 / 2.0;
    let cy = bbox.y as f64 + bbox.h as f64 / 2.0;
    let half_w = factor * bbox.w as f64 / 2.0;
    let half_h = factor * bbox.h as f64 / 2.0;
    let clamp = |v: f64, hi: usize| v.round().clamp(0.0, hi as f64) as usize;
    Ok(CropRect {
        x0: clamp(cx - half_w, img_w),
        y0: clamp(cy - half_h, img_h),
        x1: clamp(cx + half_w, img_w),
        y1: clamp(cy + half_h, img_h),
    })
}

/// Crops the enlarged box and resizes it to `out_size × out_size`.
pub fn crop_enlarged(image: &Image, bbox: BBox, factor: f64, out_size: usize) -> Result<Image> {
    let r = crop_rect(image.width(), image.height(), bbox, factor)?;
    let rgb = RgbImage::from_raw(
        image.width() as u32,
        image.height() as u32,
        image.pixels().to_vec(),
    )
    .expect("valid image buffer");
    let cropped = imageops::crop_imm(&rgb, r.x0 as u32, r.y0 as u32, r.width() as u32, r.height() as u32)
        .to_image();
    let resized = imageops::resize(&cropped, out_size as u32, out_size as u32, FilterType::Triangle);
    Image::new(out_size, out_size, resized.into_raw())
}

/// Same geometry as [`crop_enlarged`] applied to a mask: the {0,255} mask is
/// resampled as grayscale and re-binarized at [`MASK_THRESHOLD`].
pub fn crop_enlarged_mask(
    mask: &GroundTruthMask,
    bbox: BBox,
    factor: f64,
    out_size: usize,
) -> Result<GroundTruthMask> {
    let r = crop_rect(mask.width(), mask.height(), bbox, factor)?;
    let gray = GrayImage::from_raw(
        mask.width() as u32,
        mask.height() as u32,
        mask.values().iter().map(|&v| v * 255).collect(),
    )
    .expect("valid mask buffer");
    let cropped =
        imageops::crop_imm(&gray, r.x0 as u32, r.y0 as u32, r.width() as u32, r.height() as u32)
            .to_image();
    let resized = imageops::resize(&cropped, out_size as u32, out_size as u32, FilterType::Triangle);
    Ok(binarize_mask(out_size, out_size, resized.as_raw(), MASK_THRESHOLD))
}
