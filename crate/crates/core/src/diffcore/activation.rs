use super::layer::missing_cache;
use super::{Layer, Mode, Scalar, Tensor};
use crate::Result;

pub const LEAKY_SLOPE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Sigmoid,
    Tanh,
}

pub fn relu<S: Scalar>(x: S) -> S {
    if x > S::zero() {
        x
    } else {
        S::zero()
    }
}

pub fn leaky_relu<S: Scalar>(x: S, slope: S) -> S {
    if x > S::zero() {
        x
    } else {
        x * slope
    }
}

pub fn sigmoid<S: Scalar>(x: S) -> S {
    // split on sign so exp never overflows
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

pub fn tanh<S: Scalar>(x: S) -> S {
    x.tanh()
}

impl Activation {
    pub fn apply<S: Scalar>(self, x: S) -> S {
        match self {
            Activation::Relu => relu(x),
            Activation::LeakyRelu(a) => leaky_relu(x, S::of(a)),
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => tanh(x),
        }
    }

    /// Derivative given the input `x` and the output `y = apply(x)`.
    pub fn derivative<S: Scalar>(self, x: S, y: S) -> S {
        match self {
            Activation::Relu => {
                if x > S::zero() {
                    S::one()
                } else {
                    S::zero()
                }
            }
            Activation::LeakyRelu(a) => {
                if x > S::zero() {
                    S::one()
                } else {
                    S::of(a)
                }
            }
            Activation::Sigmoid => y * (S::one() - y),
            Activation::Tanh => S::one() - y * y,
        }
    }
}

/// Elementwise activation layer.
pub struct Act<S> {
    pub kind: Activation,
    cache: Option<(Tensor<S>, Tensor<S>)>,
}

impl<S: Scalar> Act<S> {
    pub fn new(kind: Activation) -> Self {
        Self { kind, cache: None }
    }

    pub fn relu() -> Self {
        Self::new(Activation::Relu)
    }

    pub fn leaky() -> Self {
        Self::new(Activation::LeakyRelu(LEAKY_SLOPE))
    }

    pub fn sigmoid() -> Self {
        Self::new(Activation::Sigmoid)
    }
}

impl<S: Scalar> Layer<S> for Act<S> {
    fn forward(&mut self, x: &Tensor<S>, _mode: Mode) -> Result<Tensor<S>> {
        let kind = self.kind;
        let y = x.map(|v| kind.apply(v));
        self.cache = Some((x.clone(), y.clone()));
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor<S>) -> Result<Tensor<S>> {
        let (x, y) = self.cache.as_ref().ok_or_else(|| missing_cache("activation"))?;
        grad.expect_shape("activation grad", x.shape())?;
        let kind = self.kind;
        let data = grad
            .data
            .iter()
            .zip(x.data.iter().zip(&y.data))
            .map(|(&g, (&xv, &yv))| g * kind.derivative(xv, yv))
            .collect();
        Tensor::from_vec(x.shape(), data)
    }
}
