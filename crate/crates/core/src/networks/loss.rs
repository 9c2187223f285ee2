//! Interpolation and normal losses.

use nalgebra::Vector3;

use crate::diffcore::{Scalar, Tensor};
use crate::{Error, Result};

/// Dot products are clamped to this far inside `[-1, 1]` before `arccos`.
pub const ACOS_CLAMP: f64 = 1e-7;
/// Unit-length tolerance for [`mae_loss`] inputs.
pub const UNIT_TOLERANCE: f64 = 1e-4;

/// Scale-invariant loss: the population variance of `pred - target`.
pub fn scale_invariant_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    Ok(scale_invariant_with_grad(pred, target)?.0)
}

/// [`scale_invariant_loss`] and its gradient with respect to `pred`.
pub fn scale_invariant_with_grad<S: Scalar>(pred: &[S], target: &[S]) -> Result<(f64, Vec<S>)> {
    if pred.len() != target.len() {
        return Err(Error::ShapeMismatch {
            op: "scale_invariant_loss",
            expected: vec![target.len()],
            actual: vec![pred.len()],
        });
    }
    let n = pred.len();
    if n == 0 {
        return Err(Error::invalid("scale-invariant loss over zero cells"));
    }
    let nf = n as f64;
    let r: Vec<f64> = pred.iter().zip(target).map(|(p, t)| p.as_f64() - t.as_f64()).collect();
    let sum: f64 = r.iter().sum();
    let sq: f64 = r.iter().map(|v| v * v).sum();
    let loss = (sq / nf - (sum / nf) * (sum / nf)).max(0.0);
    let mean = sum / nf;
    let grad = r.iter().map(|&ri| S::of(2.0 * (ri - mean) / nf)).collect();
    Ok((loss, grad))
}

fn check_unit(a: &Vector3<f64>, b: &Vector3<f64>) -> Result<()> {
    let (na, nb) = (a.norm(), b.norm());
    if (na - 1.0).abs() > UNIT_TOLERANCE || (nb - 1.0).abs() > UNIT_TOLERANCE {
        return Err(Error::NotUnit { a: na, b: nb });
    }
    Ok(())
}

/// Angle in radians between two unit vectors, with the clamped dot product.
pub fn mae_loss(n: &Vector3<f64>, n_hat: &Vector3<f64>) -> Result<f64> {
    check_unit(n, n_hat)?;
    Ok(n.dot(n_hat).clamp(-1.0 + ACOS_CLAMP, 1.0 - ACOS_CLAMP).acos())
}

/// Gradient of [`mae_loss`] with respect to `n_hat`; zero where the clamp is
/// active.
pub fn mae_loss_grad(n: &Vector3<f64>, n_hat: &Vector3<f64>) -> Vector3<f64> {
    let d = n.dot(n_hat);
    if d <= -1.0 + ACOS_CLAMP || d >= 1.0 - ACOS_CLAMP {
        return Vector3::zeros();
    }
    -n / (1.0 - d * d).sqrt()
}

pub fn total_loss(l_e: f64, l_n: f64) -> f64 {
    l_e + l_n
}

fn row3<S: Scalar>(t: &Tensor<S>, i: usize) -> Vector3<f64> {
    Vector3::new(t.data[3 * i].as_f64(), t.data[3 * i + 1].as_f64(), t.data[3 * i + 2].as_f64())
}

/// Batch mean of [`mae_loss`] over `N x 3` tensors, with the gradient with
/// respect to `pred`.
pub fn batch_mae_loss<S: Scalar>(pred: &Tensor<S>, truth: &Tensor<S>) -> Result<(f64, Tensor<S>)> {
    let n = pred.shape().first().copied().unwrap_or(0);
    pred.expect_shape("mae prediction", &[n, 3])?;
    truth.expect_shape("mae truth", &[n, 3])?;
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let scale = 1.0 / n as f64;
    let mut total = 0.0;
    let mut grad = Tensor::zeros(&[n, 3]);
    for i in 0..n {
        let (t, p) = (row3(truth, i), row3(pred, i));
        total += mae_loss(&t, &p)?;
        let g = mae_loss_grad(&t, &p) * scale;
        for k in 0..3 {
            grad.data[3 * i + k] = S::of(g[k]);
        }
    }
    Ok((total * scale, grad))
}

/// Batch mean of the per-sample scale-invariant loss over `N x ...` tensors.
pub fn batch_scale_invariant_loss<S: Scalar>(pred: &Tensor<S>, target: &Tensor<S>) -> Result<(f64, Tensor<S>)> {
    target.expect_shape("scale-invariant target", pred.shape())?;
    let n = pred.shape().first().copied().unwrap_or(0);
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let per = pred.len() / n;
    let scale = 1.0 / n as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (p, t) in pred.data.chunks(per).zip(target.data.chunks(per)) {
        let (l, g) = scale_invariant_with_grad(p, t)?;
        total += l;
        grad.extend(g.into_iter().map(|v| v * S::of(scale)));
    }
    Ok((total * scale, Tensor::from_vec(pred.shape(), grad)?))
}
