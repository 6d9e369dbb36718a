//! Dense kernels backing the differentiable ops: patch extraction for
//! convolutions and batched matrix products.

use ndarray::{linalg::general_mat_mul, ArrayD, ArrayView2, ArrayViewMut2, IxDyn};

/// Static geometry of a 2-D sliding window over an `[N, C, H, W]` input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn patch_len(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn input_shape(&self) -> Vec<usize> {
        vec![self.batch, self.channels, self.height, self.width]
    }

    pub fn cols_shape(&self) -> Vec<usize> {
        vec![
            self.batch,
            self.patch_len(),
            self.out_height() * self.out_width(),
        ]
    }
}

/// `[N, C, H, W]` → `[N, C·k·k, Ho·Wo]`, zero outside the padded border.
pub fn im2col(x: &ArrayD<f64>, g: &ConvGeom) -> ArrayD<f64> {
    let x = x.as_standard_layout();
    let src = x.as_slice().expect("standard layout");
    let (ho, wo) = (g.out_height(), g.out_width());
    let plen = g.patch_len();
    let npos = ho * wo;
    let mut out = vec![0.0; g.batch * plen * npos];
    let k = g.kernel;
    for n in 0..g.batch {
        for c in 0..g.channels {
            let plane = &src[(n * g.channels + c) * g.height * g.width..][..g.height * g.width];
            for ki in 0..k {
                for kj in 0..k {
                    let row = c * k * k + ki * k + kj;
                    let dst = &mut out[(n * plen + row) * npos..][..npos];
                    for oy in 0..ho {
                        let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.height as isize {
                            continue;
                        }
                        let iy = iy as usize;
                        for ox in 0..wo {
                            let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                            if ix >= 0 && (ix as usize) < g.width {
                                dst[oy * wo + ox] = plane[iy * g.width + ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    ArrayD::from_shape_vec(IxDyn(&g.cols_shape()), out).expect("cols shape")
}

/// Adjoint of [`im2col`]: scatter-adds patch columns back onto the image grid.
pub fn col2im(cols: &ArrayD<f64>, g: &ConvGeom) -> ArrayD<f64> {
    let cols = cols.as_standard_layout();
    let src = cols.as_slice().expect("standard layout");
    let (ho, wo) = (g.out_height(), g.out_width());
    let plen = g.patch_len();
    let npos = ho * wo;
    let mut out = vec![0.0; g.batch * g.channels * g.height * g.width];
    let k = g.kernel;
    for n in 0..g.batch {
        for c in 0..g.channels {
            let plane =
                &mut out[(n * g.channels + c) * g.height * g.width..][..g.height * g.width];
            for ki in 0..k {
                for kj in 0..k {
                    let row = c * k * k + ki * k + kj;
                    let s = &src[(n * plen + row) * npos..][..npos];
                    for oy in 0..ho {
                        let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.height as isize {
                            continue;
                        }
                        let iy = iy as usize;
                        for ox in 0..wo {
                            let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                            if ix >= 0 && (ix as usize) < g.width {
                                plane[iy * g.width + ix as usize] += s[oy * wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    ArrayD::from_shape_vec(IxDyn(&g.input_shape()), out).expect("image shape")
}

/// Batched matrix product `[Ba, m, k] × [Bb, k, n] → [B, m, n]` where a batch
/// extent of 1 broadcasts against the other operand.
pub fn bmm(a: &ArrayD<f64>, b: &ArrayD<f64>) -> ArrayD<f64> {
    let (ba, m, k) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    let (bb, k2, n) = (b.shape()[0], b.shape()[1], b.shape()[2]);
    assert_eq!(k, k2, "bmm inner dimension mismatch");
    assert!(ba == bb || ba == 1 || bb == 1, "bmm batch mismatch");
    let batch = ba.max(bb);
    let a = a.as_standard_layout();
    let b = b.as_standard_layout();
    let asl = a.as_slice().expect("standard layout");
    let bsl = b.as_slice().expect("standard layout");

    let mut out = vec![0.0; batch * m * n];
    for i in 0..batch {
        let ai = if ba == 1 { 0 } else { i };
        let bi = if bb == 1 { 0 } else { i };
        let av = ArrayView2::from_shape((m, k), &asl[ai * m * k..][..m * k]).unwrap();
        let bv = ArrayView2::from_shape((k, n), &bsl[bi * k * n..][..k * n]).unwrap();
        let mut ov = ArrayViewMut2::from_shape((m, n), &mut out[i * m * n..][..m * n]).unwrap();
        general_mat_mul(1.0, &av, &bv, 0.0, &mut ov);
    }
    ArrayD::from_shape_vec(IxDyn(&[batch, m, n]), out).expect("bmm shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> ArrayD<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ArrayD::from_shape_fn(IxDyn(shape), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let g = ConvGeom {
            batch: 2,
            channels: 3,
            height: 7,
            width: 6,
            kernel: 3,
            stride: 2,
            pad: 1,
        };
        let x = random(&g.input_shape(), 1);
        let y = random(&g.cols_shape(), 2);
        let lhs: f64 = (&im2col(&x, &g) * &y).sum();
        let rhs: f64 = (&x * &col2im(&y, &g)).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn bmm_matches_naive_product() {
        let a = random(&[1, 3, 4], 3);
        let b = random(&[2, 4, 5], 4);
        let c = bmm(&a, &b);
        for bi in 0..2 {
            for i in 0..3 {
                for j in 0..5 {
                    let want: f64 = (0..4).map(|t| a[[0, i, t]] * b[[bi, t, j]]).sum();
                    assert!((c[[bi, i, j]] - want).abs() < 1e-12);
                }
            }
        }
    }
}
