//! 2D cross-correlation over NCHW tensors via im2col + GEMM.
//!
//! The batch is processed in fixed-size chunks so that work can fan out
//! across threads; per-chunk weight gradients are summed in chunk order,
//! which keeps results independent of the thread count.

use rand::Rng;

use super::layer::{join, missing_cache};
use super::scalar::{gemm, Strides};
use super::{Layer, Mode, Param, Scalar, Tensor};
use crate::{par, Error, Result};

/// Target number of im2col columns per chunk.
const CHUNK_COLUMNS: usize = 512;

#[derive(Debug, Clone, Copy)]
struct Geometry {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn new(x: &[usize], w: &[usize], stride: usize, pad: usize) -> Result<Self> {
        let mismatch = || Error::ShapeMismatch {
            op: "conv2d",
            expected: vec![w.first().copied().unwrap_or(0), x.get(1).copied().unwrap_or(0), 0, 0],
            actual: w.to_vec(),
        };
        let [n, cin, h, wd] = x[..] else {
            return Err(Error::ShapeMismatch {
                op: "conv2d input",
                expected: vec![0, 0, 0, 0],
                actual: x.to_vec(),
            });
        };
        let [cout, wc, kh, kw] = w[..] else {
            return Err(mismatch());
        };
        if wc != cin || kh != kw || kh == 0 {
            return Err(mismatch());
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d stride must be positive"));
        }
        if h + 2 * pad < kh || wd + 2 * pad < kh {
            return Err(Error::ShapeMismatch {
                op: "conv2d kernel larger than padded input",
                expected: vec![kh, kh],
                actual: vec![h + 2 * pad, wd + 2 * pad],
            });
        }
        Ok(Self {
            n,
            cin,
            h,
            w: wd,
            cout,
            k: kh,
            stride,
            pad,
            ho: (h + 2 * pad - kh) / stride + 1,
            wo: (wd + 2 * pad - kh) / stride + 1,
        })
    }

    fn ckk(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn hw_out(&self) -> usize {
        self.ho * self.wo
    }

    fn chunk(&self) -> usize {
        (CHUNK_COLUMNS / self.hw_out().max(1)).max(1)
    }

    fn chunks(&self) -> usize {
        self.n.div_ceil(self.chunk())
    }

    fn chunk_range(&self, ci: usize) -> (usize, usize) {
        let s0 = ci * self.chunk();
        (s0, (s0 + self.chunk()).min(self.n))
    }

    fn out_shape(&self) -> [usize; 4] {
        [self.n, self.cout, self.ho, self.wo]
    }

    /// Output columns `ox` whose input column `ox * stride + kx - pad` lies
    /// inside the image.
    fn valid_cols(&self, kx: usize) -> (usize, usize) {
        let lo = self.pad.saturating_sub(kx).div_ceil(self.stride);
        let hi = if self.w + self.pad > kx {
            ((self.w - 1 + self.pad - kx) / self.stride + 1).min(self.wo)
        } else {
            0
        };
        (lo, hi.max(lo))
    }

    fn im2col<S: Scalar>(&self, x: &[S], s0: usize, s1: usize) -> Vec<S> {
        let hw = self.hw_out();
        let ncols = (s1 - s0) * hw;
        let mut col = vec![S::zero(); self.ckk() * ncols];
        for s in s0..s1 {
            let xs = &x[s * self.cin * self.h * self.w..];
            let cbase = (s - s0) * hw;
            for ci in 0..self.cin {
                let plane = &xs[ci * self.h * self.w..(ci + 1) * self.h * self.w];
                for ky in 0..self.k {
                    for kx in 0..self.k {
                        let r = (ci * self.k + ky) * self.k + kx;
                        let row = &mut col[r * ncols + cbase..r * ncols + cbase + hw];
                        let (lo, hi) = self.valid_cols(kx);
                        if lo >= hi {
                            continue;
                        }
                        let ix0 = lo * self.stride + kx - self.pad;
                        for oy in 0..self.ho {
                            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                            if iy < 0 || iy >= self.h as isize {
                                continue;
                            }
                            let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                            let dst = &mut row[oy * self.wo + lo..oy * self.wo + hi];
                            if self.stride == 1 {
                                dst.copy_from_slice(&src[ix0..ix0 + (hi - lo)]);
                            } else {
                                for (j, d) in dst.iter_mut().enumerate() {
                                    *d = src[ix0 + j * self.stride];
                                }
                            }
                        }
                    }
                }
            }
        }
        col
    }

    fn col2im<S: Scalar>(&self, col: &[S], s0: usize, s1: usize) -> Vec<S> {
        let hw = self.hw_out();
        let ncols = (s1 - s0) * hw;
        let plane_len = self.h * self.w;
        let mut dx = vec![S::zero(); (s1 - s0) * self.cin * plane_len];
        for s in s0..s1 {
            let cbase = (s - s0) * hw;
            let ds = &mut dx[(s - s0) * self.cin * plane_len..(s - s0 + 1) * self.cin * plane_len];
            for ci in 0..self.cin {
                let plane = &mut ds[ci * plane_len..(ci + 1) * plane_len];
                for ky in 0..self.k {
                    for kx in 0..self.k {
                        let r = (ci * self.k + ky) * self.k + kx;
                        let row = &col[r * ncols + cbase..r * ncols + cbase + hw];
                        let (lo, hi) = self.valid_cols(kx);
                        if lo >= hi {
                            continue;
                        }
                        let ix0 = lo * self.stride + kx - self.pad;
                        for oy in 0..self.ho {
                            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                            if iy < 0 || iy >= self.h as isize {
                                continue;
                            }
                            let dst = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                            let src = &row[oy * self.wo + lo..oy * self.wo + hi];
                            if self.stride == 1 {
                                for (d, &v) in dst[ix0..ix0 + (hi - lo)].iter_mut().zip(src) {
                                    *d += v;
                                }
                            } else {
                                for (j, &v) in src.iter().enumerate() {
                                    dst[ix0 + j * self.stride] += v;
                                }
                            }
                        }
                    }
                }
            }
        }
        dx
    }
}

/// Cross-correlation of `input` (`N x Cin x H x W`) with `weights`
/// (`Cout x Cin x k x k`) plus a per-channel `bias`.
pub fn conv2d<S: Scalar>(
    input: &Tensor<S>,
    weights: &Tensor<S>,
    bias: &Tensor<S>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<S>> {
    let g = Geometry::new(input.shape(), weights.shape(), stride, padding)?;
    bias.expect_shape("conv2d bias", &[g.cout])?;
    let hw = g.hw_out();
    let chunks = par::map_range(g.chunks(), |ci| {
        let (s0, s1) = g.chunk_range(ci);
        let ncols = (s1 - s0) * hw;
        let col = g.im2col(&input.data, s0, s1);
        let mut tmp = vec![S::zero(); g.cout * ncols];
        gemm(
            g.cout,
            g.ckk(),
            ncols,
            S::one(),
            &weights.data,
            Strides::row_major(g.ckk()),
            &col,
            Strides::row_major(ncols),
            S::zero(),
            &mut tmp,
            Strides::row_major(ncols),
        );
        let mut out = vec![S::zero(); (s1 - s0) * g.cout * hw];
        for s in 0..s1 - s0 {
            for co in 0..g.cout {
                let b = bias.data[co];
                let src = &tmp[co * ncols + s * hw..co * ncols + (s + 1) * hw];
                let dst = &mut out[(s * g.cout + co) * hw..(s * g.cout + co + 1) * hw];
                for (d, &v) in dst.iter_mut().zip(src) {
                    *d = v + b;
                }
            }
        }
        out
    });
    Tensor::from_vec(&g.out_shape(), chunks.concat())
}

/// Gradients of [`conv2d`] with respect to input, weights and bias.
pub fn conv2d_backward<S: Scalar>(
    input: &Tensor<S>,
    weights: &Tensor<S>,
    grad_out: &Tensor<S>,
    stride: usize,
    padding: usize,
) -> Result<(Tensor<S>, Tensor<S>, Tensor<S>)> {
    let g = Geometry::new(input.shape(), weights.shape(), stride, padding)?;
    grad_out.expect_shape("conv2d grad", &g.out_shape())?;
    let hw = g.hw_out();
    let ckk = g.ckk();
    let partials = par::map_range(g.chunks(), |ci| {
        let (s0, s1) = g.chunk_range(ci);
        let ncols = (s1 - s0) * hw;
        let col = g.im2col(&input.data, s0, s1);
        let mut gm = vec![S::zero(); g.cout * ncols];
        let mut db = vec![S::zero(); g.cout];
        for s in 0..s1 - s0 {
            for co in 0..g.cout {
                let src = &grad_out.data[((s0 + s) * g.cout + co) * hw..((s0 + s) * g.cout + co + 1) * hw];
                gm[co * ncols + s * hw..co * ncols + (s + 1) * hw].copy_from_slice(src);
                for &v in src {
                    db[co] += v;
                }
            }
        }
        let mut dw = vec![S::zero(); g.cout * ckk];
        gemm(
            g.cout,
            ncols,
            ckk,
            S::one(),
            &gm,
            Strides::row_major(ncols),
            &col,
            Strides::transposed(ncols),
            S::zero(),
            &mut dw,
            Strides::row_major(ckk),
        );
        let mut dcol = col;
        gemm(
            ckk,
            g.cout,
            ncols,
            S::one(),
            &weights.data,
            Strides::transposed(ckk),
            &gm,
            Strides::row_major(ncols),
            S::zero(),
            &mut dcol,
            Strides::row_major(ncols),
        );
        (g.col2im(&dcol, s0, s1), dw, db)
    });
    let mut dw = vec![S::zero(); g.cout * ckk];
    let mut db = vec![S::zero(); g.cout];
    let mut dx = Vec::with_capacity(input.len());
    for (dxc, dwc, dbc) in partials {
        dx.extend(dxc);
        for (a, b) in dw.iter_mut().zip(dwc) {
            *a += b;
        }
        for (a, b) in db.iter_mut().zip(dbc) {
            *a += b;
        }
    }
    Ok((
        Tensor::from_vec(input.shape(), dx)?,
        Tensor::from_vec(weights.shape(), dw)?,
        Tensor::from_vec(&[g.cout], db)?,
    ))
}

pub struct Conv2d<S> {
    pub weight: Param<S>,
    pub bias: Param<S>,
    pub stride: usize,
    pub padding: usize,
    input: Option<Tensor<S>>,
}

impl<S: Scalar> Conv2d<S> {
    /// Kaiming-uniform weights (`bound = sqrt(6 / fan_in)`), zero bias.
    pub fn new(
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = (cin * kernel * kernel) as f64;
        let bound = (6.0 / fan_in).sqrt();
        let w: Vec<S> = (0..cout * cin * kernel * kernel)
            .map(|_| S::of(rng.gen_range(-bound..bound)))
            .collect();
        Self {
            weight: Param::new(Tensor::from_vec(&[cout, cin, kernel, kernel], w).expect("sized")),
            bias: Param::new(Tensor::zeros(&[cout])),
            stride,
            padding,
            input: None,
        }
    }

    /// Same-size convolution (`stride 1`, `padding k / 2`).
    pub fn same(cin: usize, cout: usize, kernel: usize, rng: &mut impl Rng) -> Self {
        Self::new(cin, cout, kernel, 1, kernel / 2, rng)
    }

    pub fn zero_weights(mut self) -> Self {
        self.weight.value.fill(S::zero());
        self
    }
}

impl<S: Scalar> Layer<S> for Conv2d<S> {
    fn forward(&mut self, x: &Tensor<S>, _mode: Mode) -> Result<Tensor<S>> {
        let y = conv2d(x, &self.weight.value, &self.bias.value, self.stride, self.padding)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor<S>) -> Result<Tensor<S>> {
        let x = self.input.as_ref().ok_or_else(|| missing_cache("conv2d"))?;
        let (dx, dw, db) = conv2d_backward(x, &self.weight.value, grad, self.stride, self.padding)?;
        self.weight.grad.add_assign(&dw)?;
        self.bias.grad.add_assign(&db)?;
        Ok(dx)
    }

    fn collect_params<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param<S>)>) {
        out.push((join(prefix, "weight"), &mut self.weight));
        out.push((join(prefix, "bias"), &mut self.bias));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_kernel() {
        let x = Tensor::from_vec(&[1, 1, 2, 3], vec![1.0f64, -2.0, 3.0, 4.5, 0.0, 7.0]).unwrap();
        let w = Tensor::from_vec(&[1, 1, 1, 1], vec![1.0]).unwrap();
        let y = conv2d(&x, &w, &Tensor::zeros(&[1]), 1, 0).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn zero_weights_give_zero() {
        let x = Tensor::full(&[2, 3, 5, 5], 1.5f64);
        let y = conv2d(&x, &Tensor::zeros(&[4, 3, 3, 3]), &Tensor::zeros(&[4]), 1, 1).unwrap();
        assert_eq!(y.shape(), &[2, 4, 5, 5]);
        assert!(y.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ones_sum_to_nine() {
        let x = Tensor::full(&[1, 1, 3, 3], 1.0f64);
        let w = Tensor::full(&[1, 1, 3, 3], 1.0f64);
        let y = conv2d(&x, &w, &Tensor::zeros(&[1]), 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data[0], 9.0);
    }

    #[test]
    fn output_size_formula() {
        let x = Tensor::<f64>::zeros(&[1, 1, 16, 16]);
        let y = conv2d(&x, &Tensor::zeros(&[1, 1, 5, 5]), &Tensor::zeros(&[1]), 2, 2).unwrap();
        assert_eq!(y.shape(), &[1, 1, 8, 8]);
    }

    #[test]
    fn shape_mismatch_reports_shapes() {
        let x = Tensor::<f64>::zeros(&[1, 2, 4, 4]);
        let err = conv2d(&x, &Tensor::zeros(&[1, 3, 3, 3]), &Tensor::zeros(&[1]), 1, 1).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { .. }), "{err}");
        let err = conv2d(&x, &Tensor::zeros(&[1, 2, 7, 7]), &Tensor::zeros(&[1]), 1, 1).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { .. }));
    }
}
