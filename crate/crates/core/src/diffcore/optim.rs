//! Adam and the cosine-annealing learning-rate schedule.

use super::{Param, Scalar};
use crate::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First/second moments of one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments<S> {
    pub m: Vec<S>,
    pub v: Vec<S>,
}

impl<S: Scalar> Moments<S> {
    pub fn zeros(len: usize) -> Self {
        Self {
            m: vec![S::zero(); len],
            v: vec![S::zero(); len],
        }
    }
}

/// One bias-corrected Adam update at step `t` (1-based).
///
/// A gradient that is zero everywhere counts as "no gradient": parameters
/// and moments are left untouched.
#[allow(clippy::too_many_arguments)]
pub fn adam_step<S: Scalar>(
    params: &mut [S],
    grads: &[S],
    state: &mut Moments<S>,
    t: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::ShapeMismatch {
            op: "adam_step",
            expected: vec![params.len()],
            actual: vec![grads.len(), state.m.len()],
        });
    }
    if t == 0 {
        return Err(Error::invalid("adam step count starts at 1"));
    }
    if grads.iter().all(|g| *g == S::zero()) {
        return Ok(());
    }
    let (b1, b2) = (S::of(beta1), S::of(beta2));
    let bc1 = 1.0 - beta1.powi(t as i32);
    let bc2 = 1.0 - beta2.powi(t as i32);
    // fold the bias corrections into the step size
    let step = S::of(lr * bc2.sqrt() / bc1);
    let eps_hat = S::of(eps * bc2.sqrt());
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (S::one() - b1) * g;
        state.v[i] = b2 * state.v[i] + (S::one() - b2) * g * g;
        params[i] -= step * state.m[i] / (state.v[i].sqrt() + eps_hat);
    }
    Ok(())
}

/// Adam over a fixed, ordered parameter list.
#[derive(Debug, Clone)]
pub struct Adam<S> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    moments: Vec<Moments<S>>,
}

impl<S: Scalar> Default for Adam<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Adam<S> {
    pub fn new() -> Self {
        Self {
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            step: 0,
            moments: Vec::new(),
        }
    }

    /// Applies one update with learning rate `lr` to every trainable param.
    pub fn update(&mut self, params: &mut [(String, &mut Param<S>)], lr: f64) -> Result<()> {
        let trainable: Vec<&mut Param<S>> = params
            .iter_mut()
            .filter(|(_, p)| p.trainable)
            .map(|(_, p)| &mut **p)
            .collect();
        if self.moments.is_empty() {
            self.moments = trainable.iter().map(|p| Moments::zeros(p.value.len())).collect();
        }
        if self.moments.len() != trainable.len() {
            return Err(Error::invalid("optimizer state does not match parameter list"));
        }
        self.step += 1;
        for (p, state) in trainable.into_iter().zip(self.moments.iter_mut()) {
            adam_step(
                &mut p.value.data,
                &p.grad.data,
                state,
                self.step,
                lr,
                self.beta1,
                self.beta2,
                self.eps,
            )?;
        }
        Ok(())
    }
}

/// `min_lr + (base_lr - min_lr) (1 + cos(pi step / total)) / 2`.
pub fn cosine_lr(step: usize, total: usize, base_lr: f64, min_lr: f64) -> Result<f64> {
    if total == 0 {
        return Err(Error::invalid("cosine schedule needs a positive step count"));
    }
    if step > total {
        return Err(Error::invalid(format!("step {step} beyond schedule length {total}")));
    }
    let phase = std::f64::consts::PI * step as f64 / total as f64;
    Ok(min_lr + (base_lr - min_lr) * (1.0 + phase.cos()) / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(x: &mut [f64], g: &[f64], st: &mut Moments<f64>, t: u64, lr: f64) {
        adam_step(x, g, st, t, lr, ADAM_BETA1, ADAM_BETA2, ADAM_EPS).unwrap();
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut x = vec![1.0, -2.0];
        let mut st = Moments {
            m: vec![0.3, 0.1],
            v: vec![0.2, 0.5],
        };
        let before = (x.clone(), st.clone());
        step(&mut x, &[0.0, 0.0], &mut st, 7, 0.01);
        assert_eq!((x, st), before);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        // m_hat = g, v_hat = g^2 -> update = lr * g / (|g| + eps)
        for g in [3.0, -0.02] {
            let mut x = vec![0.0];
            let mut st = Moments::zeros(1);
            step(&mut x, &[g], &mut st, 1, 0.001);
            let expected = -0.001 * g / (g.abs() + ADAM_EPS);
            assert!((x[0] - expected).abs() < 1e-15, "{} vs {}", x[0], expected);
        }
    }

    #[test]
    fn descends_a_quadratic() {
        let mut x = vec![1.0];
        let mut st = Moments::zeros(1);
        let mut prev = 0.5 * x[0] * x[0];
        for t in 1..=2 {
            let g = [x[0]];
            step(&mut x, &g, &mut st, t, 0.1);
            let f = 0.5 * x[0] * x[0];
            assert!(f < prev);
            prev = f;
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut x = vec![0.0; 2];
        let mut st = Moments::zeros(2);
        assert!(adam_step(&mut x, &[1.0], &mut st, 1, 0.1, 0.9, 0.999, 1e-8).is_err());
    }

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(0, 10, 0.001, 0.0).unwrap(), 0.001);
        assert!((cosine_lr(10, 10, 0.001, 1e-5).unwrap() - 1e-5).abs() < 1e-18);
        assert!((cosine_lr(5, 10, 0.001, 0.0).unwrap() - 0.0005).abs() < 1e-15);
        assert!(cosine_lr(0, 0, 0.001, 0.0).is_err());
    }
}
