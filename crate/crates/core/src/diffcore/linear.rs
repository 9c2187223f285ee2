use rand::Rng;

use super::layer::{join, missing_cache};
use super::scalar::{gemm, Strides};
use super::{Layer, Mode, Param, Scalar, Tensor};
use crate::{Error, Result};

/// Fully connected layer, `y = x W^T + b` on `N x in` inputs.
pub struct Linear<S> {
    pub weight: Param<S>,
    pub bias: Param<S>,
    input: Option<Tensor<S>>,
}

impl<S: Scalar> Linear<S> {
    pub fn new(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / inputs as f64).sqrt();
        let w = (0..inputs * outputs)
            .map(|_| S::of(rng.gen_range(-bound..bound)))
            .collect();
        Self {
            weight: Param::new(Tensor::from_vec(&[outputs, inputs], w).expect("sized")),
            bias: Param::new(Tensor::zeros(&[outputs])),
            input: None,
        }
    }

    fn dims(&self, x: &Tensor<S>) -> Result<(usize, usize, usize)> {
        let (outputs, inputs) = (self.weight.value.shape()[0], self.weight.value.shape()[1]);
        match *x.shape() {
            [n, k] if k == inputs => Ok((n, inputs, outputs)),
            _ => Err(Error::ShapeMismatch {
                op: "linear",
                expected: vec![x.shape().first().copied().unwrap_or(0), inputs],
                actual: x.shape().to_vec(),
            }),
        }
    }
}

impl<S: Scalar> Layer<S> for Linear<S> {
    fn forward(&mut self, x: &Tensor<S>, _mode: Mode) -> Result<Tensor<S>> {
        let (n, k, o) = self.dims(x)?;
        let mut y = Tensor::zeros(&[n, o]);
        for row in y.data.chunks_mut(o) {
            row.copy_from_slice(&self.bias.value.data);
        }
        gemm(
            n,
            k,
            o,
            S::one(),
            &x.data,
            Strides::row_major(k),
            &self.weight.value.data,
            Strides::transposed(k),
            S::one(),
            &mut y.data,
            Strides::row_major(o),
        );
        self.input = Some(x.clone());
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor<S>) -> Result<Tensor<S>> {
        let x = self.input.as_ref().ok_or_else(|| missing_cache("linear"))?;
        let (n, k, o) = self.dims(x)?;
        grad.expect_shape("linear grad", &[n, o])?;
        // dW += g^T x
        gemm(
            o,
            n,
            k,
            S::one(),
            &grad.data,
            Strides::transposed(o),
            &x.data,
            Strides::row_major(k),
            S::one(),
            &mut self.weight.grad.data,
            Strides::row_major(k),
        );
        for row in grad.data.chunks(o) {
            for (b, &g) in self.bias.grad.data.iter_mut().zip(row) {
                *b += g;
            }
        }
        let mut dx = Tensor::zeros(&[n, k]);
        gemm(
            n,
            o,
            k,
            S::one(),
            &grad.data,
            Strides::row_major(o),
            &self.weight.value.data,
            Strides::row_major(k),
            S::zero(),
            &mut dx.data,
            Strides::row_major(k),
        );
        Ok(dx)
    }

    fn collect_params<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param<S>)>) {
        out.push((join(prefix, "weight"), &mut self.weight));
        out.push((join(prefix, "bias"), &mut self.bias));
    }
}
