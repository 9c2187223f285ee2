use super::{Param, Scalar, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A differentiable layer that caches what its backward pass needs.
///
/// `backward` takes the gradient of the loss with respect to the last
/// `forward` output, accumulates parameter gradients and returns the gradient
/// with respect to that forward call's input.
pub trait Layer<S: Scalar>: Send {
    fn forward(&mut self, x: &Tensor<S>, mode: Mode) -> Result<Tensor<S>>;

    fn backward(&mut self, grad: &Tensor<S>) -> Result<Tensor<S>>;

    fn collect_params<'a>(&'a mut self, _prefix: &str, _out: &mut Vec<(String, &'a mut Param<S>)>) {}
}

pub(crate) fn missing_cache(layer: &str) -> Error {
    Error::invalid(format!("{layer}: backward called before forward"))
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Layers applied in order.
#[derive(Default)]
pub struct Sequential<S> {
    layers: Vec<(String, Box<dyn Layer<S>>)>,
}

impl<S: Scalar> Sequential<S> {
    pub fn new() -> Self {
        Self { layers: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, layer: impl Layer<S> + 'static) -> &mut Self {
        self.layers.push((name.into(), Box::new(layer)));
        self
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

impl<S: Scalar> Layer<S> for Sequential<S> {
    fn forward(&mut self, x: &Tensor<S>, mode: Mode) -> Result<Tensor<S>> {
        let mut cur = x.clone();
        for (_, layer) in self.layers.iter_mut() {
            cur = layer.forward(&cur, mode)?;
        }
        Ok(cur)
    }

    fn backward(&mut self, grad: &Tensor<S>) -> Result<Tensor<S>> {
        let mut g = grad.clone();
        for (_, layer) in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    fn collect_params<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param<S>)>) {
        for (name, layer) in self.layers.iter_mut() {
            layer.collect_params(&join(prefix, name), out);
        }
    }
}
