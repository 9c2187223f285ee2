//! Composite layers used by the three sub-networks.

use rand::Rng;

use crate::diffcore::{
    concat_channels, sigmoid, split_channels, Act, AvgPool2, BatchNorm2d, Conv2d, Layer, Mode, Param, Scalar,
    Sequential, Tensor,
};
use crate::diffcore::{join, missing_cache};
use crate::{Error, Result};

/// `M_out = ReLU(BN(conv3x3(M_in))) + M_in`.
pub struct ResidualBlock<S> {
    body: Sequential<S>,
}

impl<S: Scalar> ResidualBlock<S> {
    pub fn new(width: usize, rng: &mut impl Rng) -> Self {
        let mut body = Sequential::new();
        body.push("conv", Conv2d::same(width, width, 3, rng))
            .push("bn", BatchNorm2d::new(width))
            .push("act", Act::relu());
        Self { body }
    }

    pub fn zeroed(width: usize, rng: &mut impl Rng) -> Self {
        let mut body = Sequential::new();
        body.push("conv", Conv2d::same(width, width, 3, rng).zero_weights())
            .push("bn", BatchNorm2d::new(width))
            .push("act", Act::relu());
        Self { body }
    }
}

impl<S: Scalar> Layer<S> for ResidualBlock<S> {
    fn forward(&mut self, x: &Tensor<S>, mode: Mode) -> Result<Tensor<S>> {
        let mut y = self.body.forward(x, mode)?;
        y.add_assign(x)?;
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor<S>) -> Result<Tensor<S>> {
        let mut dx = self.body.backward(grad)?;
        dx.add_assign(grad)?;
        Ok(dx)
    }

    fn collect_params<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param<S>)>) {
        self.body.collect_params(prefix, out);
    }
}

/// Densely connected conv-ReLU layers; each layer sees the concatenation of
/// the block input and every earlier layer's output.
pub struct DenseBlock<S> {
    layers: Vec<Sequential<S>>,
    inputs: usize,
    growth: usize,
}

impl<S: Scalar> DenseBlock<S> {
    pub fn new(inputs: usize, growth: usize, depth: usize, rng: &mut impl Rng) -> Self {
        let layers = (0..depth)
            .map(|i| {
                let mut s = Sequential::new();
                s.push("conv", Conv2d::same(inputs + i * growth, growth, 3, rng))
                    .push("act", Act::relu());
                s
            })
            .collect();
        Self { layers, inputs, growth }
    }

    pub fn outputs(&self) -> usize {
        self.inputs + self.layers.len() * self.growth
    }
}

impl<S: Scalar> Layer<S> for DenseBlock<S> {
    fn forward(&mut self, x: &Tensor<S>, mode: Mode) -> Result<Tensor<S>> {
        let mut feats = x.clone();
        for layer in &mut self.layers {
            let y = layer.forward(&feats, mode)?;
            feats = concat_channels(&[&feats, &y])?;
        }
        Ok(feats)
    }

    fn backward(&mut self, grad: &Tensor<S>) -> Result<Tensor<S>> {
        let mut g = grad.clone();
        for (i, layer) in self.layers.iter_mut().enumerate().rev() {
            let prefix = self.inputs + i * self.growth;
            let mut parts = split_channels(&g, &[prefix, self.growth])?;
            let g_new = parts.pop().expect("two parts");
            let mut g_prev = parts.pop().expect("two parts");
            g_prev.add_assign(&layer.backward(&g_new)?)?;
            g = g_prev;
        }
        Ok(g)
    }

    fn collect_params<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param<S>)>) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.collect_params(&join(prefix, &format!("layer{i}")), out);
        }
    }
}

/// conv1x1 -> BN -> ReLU -> 2x2 average pooling.
pub fn transition_block<S: Scalar>(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Sequential<S> {
    let mut s = Sequential::new();
    s.push("conv", Conv2d::new(inputs, outputs, 1, 1, 0, rng))
        .push("bn", BatchNorm2d::new(outputs))
        .push("act", Act::relu())
        .push("pool", AvgPool2::new());
    s
}

/// Observation fusion: `sigmoid(conv1x1(O)) * O` channelwise.
pub struct FusionGate<S> {
    pub conv: Conv2d<S>,
    cache: Option<(Tensor<S>, Tensor<S>)>,
}

impl<S: Scalar> FusionGate<S> {
    pub fn new(channels: usize, rng: &mut impl Rng) -> Self {
        Self {
            conv: Conv2d::new(channels, channels, 1, 1, 0, rng),
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.conv.weight.value.shape()[0]
    }
}

impl<S: Scalar> Layer<S> for FusionGate<S> {
    fn forward(&mut self, x: &Tensor<S>, mode: Mode) -> Result<Tensor<S>> {
        let (_, c, _, _) = x.dims4("fusion")?;
        if c != self.channels() {
            return Err(Error::ShapeMismatch {
                op: "fusion channels",
                expected: vec![self.channels()],
                actual: vec![c],
            });
        }
        let gate = self.conv.forward(x, mode)?.map(sigmoid);
        let y = gate.zip_map(x, |s, o| s * o)?;
        self.cache = Some((x.clone(), gate));
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor<S>) -> Result<Tensor<S>> {
        let (x, gate) = self.cache.as_ref().ok_or_else(|| missing_cache("fusion"))?;
        grad.expect_shape("fusion grad", x.shape())?;
        let mut dx = grad.zip_map(gate, |g, s| g * s)?;
        let dpre = Tensor::from_vec(
            x.shape(),
            grad.data
                .iter()
                .zip(&x.data)
                .zip(&gate.data)
                .map(|((&g, &o), &s)| g * o * s * (S::one() - s))
                .collect(),
        )?;
        dx.add_assign(&self.conv.backward(&dpre)?)?;
        Ok(dx)
    }

    fn collect_params<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param<S>)>) {
        self.conv.collect_params(&join(prefix, "conv"), out);
    }
}

/// Row-wise `v / |v|` on an `N x 3` tensor.
#[derive(Default)]
pub struct UnitNormalize<S> {
    cache: Option<(Tensor<S>, Vec<S>)>,
}

impl<S: Scalar> UnitNormalize<S> {
    pub fn new() -> Self {
        Self { cache: None }
    }
}

impl<S: Scalar> Layer<S> for UnitNormalize<S> {
    fn forward(&mut self, x: &Tensor<S>, _mode: Mode) -> Result<Tensor<S>> {
        let d = match *x.shape() {
            [_, d] => d,
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "normalize",
                    expected: vec![0, 3],
                    actual: x.shape().to_vec(),
                })
            }
        };
        let mut y = x.clone();
        let mut norms = Vec::with_capacity(x.shape()[0]);
        for row in y.data.chunks_mut(d) {
            let norm = row.iter().map(|&v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt();
            if norm < 1e-12 {
                return Err(Error::DegenerateNormal);
            }
            let inv = S::of(1.0 / norm);
            row.iter_mut().for_each(|v| *v *= inv);
            norms.push(S::of(norm));
        }
        self.cache = Some((y.clone(), norms));
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor<S>) -> Result<Tensor<S>> {
        let (y, norms) = self.cache.as_ref().ok_or_else(|| missing_cache("normalize"))?;
        grad.expect_shape("normalize grad", y.shape())?;
        let d = y.shape()[1];
        let mut dx = grad.clone();
        for ((drow, yrow), &norm) in dx.data.chunks_mut(d).zip(y.data.chunks(d)).zip(norms) {
            // (I - y y^T) g / |v|
            let dot = drow.iter().zip(yrow).map(|(&g, &v)| g * v).sum::<S>();
            for (g, &v) in drow.iter_mut().zip(yrow) {
                *g = (*g - dot * v) / norm;
            }
        }
        Ok(dx)
    }
}
