//! JPEG-style block quantization: forward DCT-II per 8×8 block, division by a
//! quality-scaled table, rounding, and reconstruction. Entropy coding is not
//! simulated since the round trip alone determines the pixel artifacts.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::image::{Image, BLOCK_SIZE};
use crate::{Error, Result};

/// ITU-T T.81 Annex K.1 luminance table, row-major.
pub const BASE_LUMINANCE_TABLE: [[u16; 8]; 8] = [
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
];

pub type QuantTable = [[u16; 8]; 8];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompressionLevel {
    quality: u8,
}

impl CompressionLevel {
    pub fn new(quality: u32) -> Result<Self> {
        if !(1..=100).contains(&quality) {
            return Err(Error::Parameter(format!(
                "quality must be in [1, 100], got {quality}"
            )));
        }
        Ok(Self {
            quality: quality as u8,
        })
    }

    pub fn quality(&self) -> u32 {
        self.quality as u32
    }

    pub const fn block_size(&self) -> usize {
        BLOCK_SIZE
    }
}

/// Scales the base luminance table with the libjpeg quality convention.
pub fn quantization_table(level: CompressionLevel) -> QuantTable {
    let q = level.quality();
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    let mut out = [[0u16; 8]; 8];
    for (row, base_row) in out.iter_mut().zip(BASE_LUMINANCE_TABLE.iter()) {
        for (v, &b) in row.iter_mut().zip(base_row.iter()) {
            let scaled = (u32::from(b) * scale + 50) / 100;
            *v = scaled.clamp(1, 255) as u16;
        }
    }
    out
}

/// Orthonormal 8-point DCT-II basis: `basis[u][x] = a(u) cos((2x+1)uπ/16)`.
fn basis() -> &'static [[f64; 8]; 8] {
    static BASIS: OnceLock<[[f64; 8]; 8]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut b = [[0.0; 8]; 8];
        for (u, row) in b.iter_mut().enumerate() {
            let a = if u == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
            for (x, v) in row.iter_mut().enumerate() {
                *v = a * (((2 * x + 1) as f64 * u as f64 * std::f64::consts::PI) / 16.0).cos();
            }
        }
        b
    })
}

pub fn forward_dct(block: &[[f64; 8]; 8]) -> [[f64; 8]; 8] {
    let b = basis();
    let mut tmp = [[0.0; 8]; 8];
    for y in 0..8 {
        for u in 0..8 {
            tmp[y][u] = (0..8).map(|x| b[u][x] * block[y][x]).sum();
        }
    }
    let mut out = [[0.0; 8]; 8];
    for v in 0..8 {
        for u in 0..8 {
            out[v][u] = (0..8).map(|y| b[v][y] * tmp[y][u]).sum();
        }
    }
    out
}

pub fn inverse_dct(coeffs: &[[f64; 8]; 8]) -> [[f64; 8]; 8] {
    let b = basis();
    let mut tmp = [[0.0; 8]; 8];
    for v in 0..8 {
        for x in 0..8 {
            tmp[v][x] = (0..8).map(|u| b[u][x] * coeffs[v][u]).sum();
        }
    }
    let mut out = [[0.0; 8]; 8];
    for y in 0..8 {
        for x in 0..8 {
            out[y][x] = (0..8).map(|v| b[v][y] * tmp[v][x]).sum();
        }
    }
    out
}

fn check_blocks(image: &Image) -> Result<()> {
    if image.height() % BLOCK_SIZE != 0 || image.width() % BLOCK_SIZE != 0 {
        return Err(Error::Dimension(format!(
            "{}x{} image is not block aligned",
            image.height(),
            image.width()
        )));
    }
    Ok(())
}

/// Visits the quantized coefficients of every channel block, in raster order.
fn for_each_quantized_block(
    image: &Image,
    table: &QuantTable,
    mut f: impl FnMut(usize, usize, usize, &[[f64; 8]; 8]),
) {
    let (h, w) = (image.height(), image.width());
    let px = image.pixels();
    for by in (0..h).step_by(BLOCK_SIZE) {
        for bx in (0..w).step_by(BLOCK_SIZE) {
            for c in 0..3 {
                let mut block = [[0.0; 8]; 8];
                for (y, row) in block.iter_mut().enumerate() {
                    for (x, v) in row.iter_mut().enumerate() {
                        *v = f64::from(px[((by + y) * w + bx + x) * 3 + c]) - 128.0;
                    }
                }
                let mut coeffs = forward_dct(&block);
                for (row, trow) in coeffs.iter_mut().zip(table.iter()) {
                    for (v, &q) in row.iter_mut().zip(trow.iter()) {
                        *v = (*v / f64::from(q)).round();
                    }
                }
                f(by, bx, c, &coeffs);
            }
        }
    }
}

/// Quantization round trip of every channel with the luminance table.
pub fn compress(image: &Image, level: CompressionLevel) -> Result<Image> {
    check_blocks(image)?;
    let table = quantization_table(level);
    let (h, w) = (image.height(), image.width());
    let mut out = vec![0u8; h * w * 3];
    for_each_quantized_block(image, &table, |by, bx, c, q| {
        let mut coeffs = *q;
        for (row, trow) in coeffs.iter_mut().zip(table.iter()) {
            for (v, &d) in row.iter_mut().zip(trow.iter()) {
                *v *= f64::from(d);
            }
        }
        let rec = inverse_dct(&coeffs);
        for (y, row) in rec.iter().enumerate() {
            for (x, &v) in row.iter().enumerate() {
                out[((by + y) * w + bx + x) * 3 + c] = (v + 128.0).round().clamp(0.0, 255.0) as u8;
            }
        }
    });
    Image::new(h, w, out)
}

/// Number of AC coefficients (all channels, all blocks) that quantize to zero.
pub fn zeroed_ac_count(image: &Image, level: CompressionLevel) -> Result<usize> {
    check_blocks(image)?;
    let table = quantization_table(level);
    let mut count = 0;
    for_each_quantized_block(image, &table, |_, _, _, q| {
        count += q
            .iter()
            .flatten()
            .skip(1)
            .filter(|v| **v == 0.0)
            .count();
    });
    Ok(count)
}
