//! Deterministic synthetic content: textured "pristine" images and spliced
//! forgeries whose donor region carries resampling and tone artifacts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::image::{GroundTruthMask, Image, BLOCK_SIZE};
use super::mask::MASK_THRESHOLD;
use crate::{Error, Result};

pub const MIN_IMAGE_SIZE: usize = 32;
pub const MIN_MASK_FRACTION: f64 = 0.05;
pub const MAX_MASK_FRACTION: f64 = 0.50;

/// SplitMix64 finalizer; used to derive independent sub-seeds.
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// How the donor region of a forgery differs from pristine content.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "camelCase")]
pub struct ForgeryStyle {
    /// Donor is rendered at `1/resample` resolution and bilinearly upsampled.
    pub resample: usize,
    /// Amplitude of the alternating-sign grid left by the upsampler.
    pub grid_amplitude: f64,
    /// Side of one grid cell pair in pixels (even); 2 is a pixel checkerboard.
    pub grid_period: usize,
    /// Maximum per-channel gain deviation of the donor.
    pub tone_shift: f64,
    /// Gaussian feather of the blend boundary, in pixels.
    pub feather_sigma: f64,
}

impl Default for ForgeryStyle {
    fn default() -> Self {
        Self {
            resample: 4,
            grid_amplitude: 6.0,
            grid_period: 4,
            tone_shift: 0.08,
            feather_sigma: 1.0,
        }
    }
}

fn check_size(size: usize) -> Result<()> {
    if size < MIN_IMAGE_SIZE || size % BLOCK_SIZE != 0 {
        return Err(Error::Dimension(format!(
            "image size {size} must be a multiple of {BLOCK_SIZE} and at least {MIN_IMAGE_SIZE}"
        )));
    }
    Ok(())
}

/// Planar float canvas, `[channel][y * size + x]`.
struct Canvas {
    size: usize,
    planes: [Vec<f64>; 3],
}

impl Canvas {
    fn new(size: usize) -> Self {
        Self {
            size,
            planes: [vec![0.0; size * size], vec![0.0; size * size], vec![0.0; size * size]],
        }
    }

    fn from_image(img: &Image) -> Self {
        let size = img.width();
        let mut c = Self::new(size);
        for (i, px) in img.pixels().chunks(3).enumerate() {
            for ch in 0..3 {
                c.planes[ch][i] = f64::from(px[ch]);
            }
        }
        c
    }

    fn to_image(&self) -> Image {
        let n = self.size * self.size;
        let mut px = Vec::with_capacity(n * 3);
        for i in 0..n {
            for ch in 0..3 {
                px.push(self.planes[ch][i].round().clamp(0.0, 255.0) as u8);
            }
        }
        Image::new(self.size, self.size, px).expect("square block-aligned canvas")
    }
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Smoothly interpolated lattice noise with `cells` cells per side, in [-1, 1].
fn value_noise(rng: &mut ChaCha8Rng, size: usize, cells: usize) -> Vec<f64> {
    let g = cells + 1;
    let lattice: Vec<f64> = (0..g * g).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut out = vec![0.0; size * size];
    for y in 0..size {
        let fy = y as f64 / size as f64 * cells as f64;
        let (iy, ty) = (fy.floor() as usize, smoothstep(fy.fract()));
        for x in 0..size {
            let fx = x as f64 / size as f64 * cells as f64;
            let (ix, tx) = (fx.floor() as usize, smoothstep(fx.fract()));
            let v00 = lattice[iy * g + ix];
            let v01 = lattice[iy * g + ix + 1];
            let v10 = lattice[(iy + 1) * g + ix];
            let v11 = lattice[(iy + 1) * g + ix + 1];
            let top = v00 + (v01 - v00) * tx;
            let bot = v10 + (v11 - v10) * tx;
            out[y * size + x] = top + (bot - top) * ty;
        }
    }
    out
}

fn paint_primitives(rng: &mut ChaCha8Rng, canvas: &mut Canvas) {
    let size = canvas.size as f64;
    let count = rng.random_range(3..=6);
    for _ in 0..count {
        let color: [f64; 3] = [
            rng.random_range(20.0..235.0),
            rng.random_range(20.0..235.0),
            rng.random_range(20.0..235.0),
        ];
        let opacity = rng.random_range(0.5..0.9);
        let cx = rng.random_range(0.0..size);
        let cy = rng.random_range(0.0..size);
        let rx = rng.random_range(size * 0.06..size * 0.3);
        let ry = rng.random_range(size * 0.06..size * 0.3);
        let ellipse = rng.random_bool(0.5);
        for y in 0..canvas.size {
            for x in 0..canvas.size {
                let dx = (x as f64 + 0.5 - cx) / rx;
                let dy = (y as f64 + 0.5 - cy) / ry;
                let inside = if ellipse {
                    dx * dx + dy * dy <= 1.0
                } else {
                    dx.abs() <= 1.0 && dy.abs() <= 1.0
                };
                if inside {
                    let i = y * canvas.size + x;
                    for ch in 0..3 {
                        let p = &mut canvas.planes[ch][i];
                        *p = *p * (1.0 - opacity) + color[ch] * opacity;
                    }
                }
            }
        }
    }
}

fn render_real(seed: u64, size: usize) -> Canvas {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x5EA1));
    let mut canvas = Canvas::new(size);
    let base: [f64; 3] = [
        rng.random_range(60.0..190.0),
        rng.random_range(60.0..190.0),
        rng.random_range(60.0..190.0),
    ];
    let mut octaves = Vec::new();
    let mut cells = 2;
    let mut amp = 45.0;
    while cells <= size / 4 {
        octaves.push((value_noise(&mut rng, size, cells), amp));
        cells *= 2;
        amp *= 0.55;
    }
    let tint: [f64; 3] = [
        rng.random_range(0.7..1.3),
        rng.random_range(0.7..1.3),
        rng.random_range(0.7..1.3),
    ];
    for ch in 0..3 {
        for i in 0..size * size {
            let n: f64 = octaves.iter().map(|(o, a)| o[i] * a).sum();
            canvas.planes[ch][i] = base[ch] + n * tint[ch];
        }
    }
    paint_primitives(&mut rng, &mut canvas);
    let grain = Normal::new(0.0, 5.0).expect("valid sigma");
    for ch in 0..3 {
        for p in canvas.planes[ch].iter_mut() {
            *p += grain.sample(&mut rng);
        }
    }
    canvas
}

/// Textured pristine image: multi-octave lattice noise, flat-colored shapes
/// with hard edges, and per-pixel grain.
pub fn generate_real_image(seed: u64, size: usize) -> Result<Image> {
    check_size(size)?;
    Ok(render_real(seed, size).to_image())
}

/// Box-downsample by `factor` and bilinearly upsample back, then add the
/// alternating grid typical of learned upsamplers.
fn resynthesize(canvas: &Canvas, style: &ForgeryStyle, rng: &mut ChaCha8Rng) -> Canvas {
    let size = canvas.size;
    let f = style.resample.max(1);
    let mut out = Canvas::new(size);
    let gains: [f64; 3] = [
        1.0 + rng.random_range(-style.tone_shift..=style.tone_shift),
        1.0 + rng.random_range(-style.tone_shift..=style.tone_shift),
        1.0 + rng.random_range(-style.tone_shift..=style.tone_shift),
    ];
    let small = size / f;
    for ch in 0..3 {
        let src = &canvas.planes[ch];
        let mut low = vec![0.0; small * small];
        for sy in 0..small {
            for sx in 0..small {
                let mut acc = 0.0;
                for y in sy * f..(sy + 1) * f {
                    for x in sx * f..(sx + 1) * f {
                        acc += src[y * size + x];
                    }
                }
                low[sy * small + sx] = acc / (f * f) as f64;
            }
        }
        let sample = |sy: isize, sx: isize| {
            let sy = sy.clamp(0, small as isize - 1) as usize;
            let sx = sx.clamp(0, small as isize - 1) as usize;
            low[sy * small + sx]
        };
        for y in 0..size {
            let fy = (y as f64 + 0.5) / f as f64 - 0.5;
            let (iy, ty) = (fy.floor() as isize, fy - fy.floor());
            for x in 0..size {
                let fx = (x as f64 + 0.5) / f as f64 - 0.5;
                let (ix, tx) = (fx.floor() as isize, fx - fx.floor());
                let top = sample(iy, ix) * (1.0 - tx) + sample(iy, ix + 1) * tx;
                let bot = sample(iy + 1, ix) * (1.0 - tx) + sample(iy + 1, ix + 1) * tx;
                let v = top * (1.0 - ty) + bot * ty;
                let h = (style.grid_period / 2).max(1);
                let grid = if (x / h + y / h) % 2 == 0 { 1.0 } else { -1.0 };
                out.planes[ch][y * size + x] = (v - 128.0) * gains[ch] + 128.0 + grid * style.grid_amplitude;
            }
        }
    }
    out
}

/// Gaussian-feathered ellipse, exactly zero beyond three sigma from the edge.
fn feathered_ellipse(size: usize, cx: f64, cy: f64, rx: f64, ry: f64, sigma: f64) -> Vec<f64> {
    let mut hard = vec![0.0; size * size];
    for y in 0..size {
        for x in 0..size {
            let dx = (x as f64 + 0.5 - cx) / rx;
            let dy = (y as f64 + 0.5 - cy) / ry;
            if dx * dx + dy * dy <= 1.0 {
                hard[y * size + x] = 1.0;
            }
        }
    }
    if sigma <= 0.0 {
        return hard;
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|k| k / norm).collect();
    let blur = |src: &[f64], horizontal: bool| {
        let mut dst = vec![0.0; size * size];
        for y in 0..size {
            for x in 0..size {
                let mut acc = 0.0;
                for (k, w) in kernel.iter().enumerate() {
                    let o = k as isize - radius;
                    let (sy, sx) = if horizontal {
                        (y as isize, x as isize + o)
                    } else {
                        (y as isize + o, x as isize)
                    };
                    if sy >= 0 && sx >= 0 && (sy as usize) < size && (sx as usize) < size {
                        acc += w * src[sy as usize * size + sx as usize];
                    }
                }
                dst[y * size + x] = acc;
            }
        }
        dst
    };
    let h = blur(&hard, true);
    blur(&h, false)
}

/// Splices a resynthesized region of the `donor_seed` image into the
/// `base_seed` image with default forgery styling.
pub fn generate_fake_pair(
    base_seed: u64,
    donor_seed: u64,
    size: usize,
) -> Result<(Image, GroundTruthMask)> {
    generate_fake_pair_styled(base_seed, donor_seed, size, &ForgeryStyle::default())
}

pub fn generate_fake_pair_styled(
    base_seed: u64,
    donor_seed: u64,
    size: usize,
    style: &ForgeryStyle,
) -> Result<(Image, GroundTruthMask)> {
    check_size(size)?;
    if base_seed == donor_seed {
        return Err(Error::DegenerateSplice(base_seed));
    }
    let base = generate_real_image(base_seed, size)?;
    let donor = render_real(donor_seed, size);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(base_seed, donor_seed ^ 0xF0_4E));
    let forged_donor = resynthesize(&donor, style, &mut rng);

    let s = size as f64;
    let (alpha, mask) = loop {
        let rx = rng.random_range(s * 0.16..s * 0.36);
        let ry = rng.random_range(s * 0.16..s * 0.36);
        let cx = rng.random_range(rx..s - rx);
        let cy = rng.random_range(ry..s - ry);
        let alpha = feathered_ellipse(size, cx, cy, rx, ry, style.feather_sigma);
        let values: Vec<u8> = alpha.iter().map(|&a| u8::from(a > MASK_THRESHOLD)).collect();
        let mask = GroundTruthMask::new(size, size, values)?;
        let frac = mask.fraction();
        if (MIN_MASK_FRACTION..=MAX_MASK_FRACTION).contains(&frac) {
            break (alpha, mask);
        }
    };

    let mut out = Canvas::from_image(&base);
    for ch in 0..3 {
        for (i, &a) in alpha.iter().enumerate() {
            if a > 0.0 {
                let p = &mut out.planes[ch][i];
                *p = a * forged_donor.planes[ch][i] + (1.0 - a) * *p;
            }
        }
    }
    Ok((out.to_image(), mask))
}
