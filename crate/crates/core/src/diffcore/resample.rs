//! Shape-changing layers: nearest-neighbor up-sampling, 2x2 average pooling,
//! global average pooling and flattening.

use super::layer::missing_cache;
use super::{Layer, Mode, Scalar, Tensor};
use crate::{Error, Result};

/// Nearest-neighbor x2 up-sampling.
#[derive(Default)]
pub struct Upsample2x {
    in_shape: Option<Vec<usize>>,
}

impl Upsample2x {
    pub fn new() -> Self {
        Self::default()
    }
}

impl<S: Scalar> Layer<S> for Upsample2x {
    fn forward(&mut self, x: &Tensor<S>, _mode: Mode) -> Result<Tensor<S>> {
        let (n, c, h, w) = x.dims4("upsample")?;
        let mut y = Tensor::zeros(&[n, c, 2 * h, 2 * w]);
        for p in 0..n * c {
            let src = &x.data[p * h * w..(p + 1) * h * w];
            let dst = &mut y.data[p * 4 * h * w..(p + 1) * 4 * h * w];
            for yy in 0..2 * h {
                for xx in 0..2 * w {
                    dst[yy * 2 * w + xx] = src[(yy / 2) * w + xx / 2];
                }
            }
        }
        self.in_shape = Some(x.shape().to_vec());
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor<S>) -> Result<Tensor<S>> {
        let shape = self.in_shape.as_ref().ok_or_else(|| missing_cache("upsample"))?;
        let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        grad.expect_shape("upsample grad", &[n, c, 2 * h, 2 * w])?;
        let mut dx = Tensor::zeros(shape);
        for p in 0..n * c {
            let src = &grad.data[p * 4 * h * w..(p + 1) * 4 * h * w];
            let dst = &mut dx.data[p * h * w..(p + 1) * h * w];
            for yy in 0..2 * h {
                for xx in 0..2 * w {
                    dst[(yy / 2) * w + xx / 2] += src[yy * 2 * w + xx];
                }
            }
        }
        Ok(dx)
    }
}

/// 2x2 average pooling with stride 2.
#[derive(Default)]
pub struct AvgPool2 {
    in_shape: Option<Vec<usize>>,
}

impl AvgPool2 {
    pub fn new() -> Self {
        Self::default()
    }
}

impl<S: Scalar> Layer<S> for AvgPool2 {
    fn forward(&mut self, x: &Tensor<S>, _mode: Mode) -> Result<Tensor<S>> {
        let (n, c, h, w) = x.dims4("avg_pool")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::ShapeMismatch {
                op: "avg_pool needs even extents",
                expected: vec![n, c, h & !1, w & !1],
                actual: x.shape().to_vec(),
            });
        }
        let (ho, wo) = (h / 2, w / 2);
        let quarter = S::of(0.25);
        let mut y = Tensor::zeros(&[n, c, ho, wo]);
        for p in 0..n * c {
            let src = &x.data[p * h * w..(p + 1) * h * w];
            let dst = &mut y.data[p * ho * wo..(p + 1) * ho * wo];
            for oy in 0..ho {
                for ox in 0..wo {
                    let i = 2 * oy * w + 2 * ox;
                    dst[oy * wo + ox] = (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]) * quarter;
                }
            }
        }
        self.in_shape = Some(x.shape().to_vec());
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor<S>) -> Result<Tensor<S>> {
        let shape = self.in_shape.as_ref().ok_or_else(|| missing_cache("avg_pool"))?;
        let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let (ho, wo) = (h / 2, w / 2);
        grad.expect_shape("avg_pool grad", &[n, c, ho, wo])?;
        let quarter = S::of(0.25);
        let mut dx = Tensor::zeros(shape);
        for p in 0..n * c {
            let src = &grad.data[p * ho * wo..(p + 1) * ho * wo];
            let dst = &mut dx.data[p * h * w..(p + 1) * h * w];
            for yy in 0..h {
                for xx in 0..w {
                    dst[yy * w + xx] = src[(yy / 2) * wo + xx / 2] * quarter;
                }
            }
        }
        Ok(dx)
    }
}

/// `N x C x H x W -> N x C` by spatial mean.
#[derive(Default)]
pub struct GlobalAvgPool {
    in_shape: Option<Vec<usize>>,
}

impl GlobalAvgPool {
    pub fn new() -> Self {
        Self::default()
    }
}

impl<S: Scalar> Layer<S> for GlobalAvgPool {
    fn forward(&mut self, x: &Tensor<S>, _mode: Mode) -> Result<Tensor<S>> {
        let (n, c, h, w) = x.dims4("global_pool")?;
        let inv = S::one() / S::of((h * w) as f64);
        let data = x.data.chunks(h * w).map(|p| p.iter().copied().sum::<S>() * inv).collect();
        self.in_shape = Some(x.shape().to_vec());
        Tensor::from_vec(&[n, c], data)
    }

    fn backward(&mut self, grad: &Tensor<S>) -> Result<Tensor<S>> {
        let shape = self.in_shape.as_ref().ok_or_else(|| missing_cache("global_pool"))?;
        let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        grad.expect_shape("global_pool grad", &[n, c])?;
        let inv = S::one() / S::of((h * w) as f64);
        let data = grad
            .data
            .iter()
            .flat_map(|&g| std::iter::repeat_n(g * inv, h * w))
            .collect();
        Tensor::from_vec(shape, data)
    }
}

/// `N x C x H x W -> N x (C H W)`.
#[derive(Default)]
pub struct Flatten {
    in_shape: Option<Vec<usize>>,
}

impl Flatten {
    pub fn new() -> Self {
        Self::default()
    }
}

impl<S: Scalar> Layer<S> for Flatten {
    fn forward(&mut self, x: &Tensor<S>, _mode: Mode) -> Result<Tensor<S>> {
        let n = x.shape()[0];
        let rest = x.len() / n.max(1);
        self.in_shape = Some(x.shape().to_vec());
        x.clone().reshape(&[n, rest])
    }

    fn backward(&mut self, grad: &Tensor<S>) -> Result<Tensor<S>> {
        let shape = self.in_shape.as_ref().ok_or_else(|| missing_cache("flatten"))?;
        grad.clone().reshape(shape)
    }
}
