use super::layer::{join, missing_cache};
use super::{Layer, Mode, Param, Scalar, Tensor};
use crate::{par, Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// `(n, c, spatial)` view of a rank-2 or rank-4 tensor.
fn dims<S: Scalar>(x: &Tensor<S>) -> Result<(usize, usize, usize)> {
    match *x.shape() {
        [n, c] => Ok((n, c, 1)),
        [n, c, h, w] => Ok((n, c, h * w)),
        _ => Err(Error::ShapeMismatch {
            op: "batch_norm",
            expected: vec![0, 0, 0, 0],
            actual: x.shape().to_vec(),
        }),
    }
}

/// Per-channel statistics of a train-mode pass.
#[derive(Debug, Clone)]
pub struct BatchStats<S> {
    pub mean: Vec<S>,
    /// Biased (population) variance.
    pub var: Vec<S>,
    pub inv_std: Vec<S>,
    pub xhat: Tensor<S>,
}

/// Contiguous runs of channel `ch` in an `n x c x sp` buffer.
fn channel_runs<S: Scalar>(data: &[S], n: usize, c: usize, sp: usize, ch: usize) -> impl Iterator<Item = &[S]> {
    (0..n).map(move |s| &data[(s * c + ch) * sp..(s * c + ch + 1) * sp])
}

/// Normalizes with batch statistics, then applies `gamma * xhat + beta`.
pub fn batch_norm_train<S: Scalar>(
    x: &Tensor<S>,
    gamma: &Tensor<S>,
    beta: &Tensor<S>,
    eps: S,
) -> Result<(Tensor<S>, BatchStats<S>)> {
    let (n, c, sp) = dims(x)?;
    gamma.expect_shape("batch_norm gamma", &[c])?;
    beta.expect_shape("batch_norm beta", &[c])?;
    if n < 2 {
        return Err(Error::BatchTooSmall);
    }
    let count = S::of((n * sp) as f64);
    let stats = par::map_range(c, |ch| {
        let mean = channel_runs(&x.data, n, c, sp, ch)
            .map(|run| run.iter().copied().sum::<S>())
            .sum::<S>()
            / count;
        let var = channel_runs(&x.data, n, c, sp, ch)
            .map(|run| {
                run.iter()
                    .map(|&v| {
                        let d = v - mean;
                        d * d
                    })
                    .sum::<S>()
            })
            .sum::<S>()
            / count;
        (mean, var)
    });
    let mean: Vec<S> = stats.iter().map(|s| s.0).collect();
    let var: Vec<S> = stats.iter().map(|s| s.1).collect();
    let inv_std: Vec<S> = var.iter().map(|&v| S::one() / (v + eps).sqrt()).collect();
    let mut xhat = Tensor::zeros(x.shape());
    let mut y = Tensor::zeros(x.shape());
    for s in 0..n {
        for ch in 0..c {
            let base = (s * c + ch) * sp;
            for i in base..base + sp {
                let xh = (x.data[i] - mean[ch]) * inv_std[ch];
                xhat.data[i] = xh;
                y.data[i] = gamma.data[ch] * xh + beta.data[ch];
            }
        }
    }
    Ok((
        y,
        BatchStats {
            mean,
            var,
            inv_std,
            xhat,
        },
    ))
}

/// Normalizes with fixed (running) statistics.
pub fn batch_norm_eval<S: Scalar>(
    x: &Tensor<S>,
    gamma: &Tensor<S>,
    beta: &Tensor<S>,
    mean: &Tensor<S>,
    var: &Tensor<S>,
    eps: S,
) -> Result<Tensor<S>> {
    let (n, c, sp) = dims(x)?;
    for t in [gamma, beta, mean, var] {
        t.expect_shape("batch_norm eval", &[c])?;
    }
    let mut y = Tensor::zeros(x.shape());
    for s in 0..n {
        for ch in 0..c {
            let scale = gamma.data[ch] / (var.data[ch] + eps).sqrt();
            let base = (s * c + ch) * sp;
            for i in base..base + sp {
                y.data[i] = (x.data[i] - mean.data[ch]) * scale + beta.data[ch];
            }
        }
    }
    Ok(y)
}

/// Gradients of [`batch_norm_train`]: `(dx, dgamma, dbeta)`.
pub fn batch_norm_backward<S: Scalar>(
    grad: &Tensor<S>,
    gamma: &Tensor<S>,
    stats: &BatchStats<S>,
) -> Result<(Tensor<S>, Tensor<S>, Tensor<S>)> {
    grad.expect_shape("batch_norm grad", stats.xhat.shape())?;
    let (n, c, sp) = dims(grad)?;
    let count = S::of((n * sp) as f64);
    let sums = par::map_range(c, |ch| {
        let mut dbeta = S::zero();
        let mut dgamma = S::zero();
        for (g, xh) in channel_runs(&grad.data, n, c, sp, ch).zip(channel_runs(&stats.xhat.data, n, c, sp, ch)) {
            for (&gv, &xv) in g.iter().zip(xh) {
                dbeta += gv;
                dgamma += gv * xv;
            }
        }
        (dgamma, dbeta)
    });
    let mut dx = Tensor::zeros(grad.shape());
    for s in 0..n {
        for ch in 0..c {
            let (dgamma, dbeta) = sums[ch];
            let k = gamma.data[ch] * stats.inv_std[ch] / count;
            let base = (s * c + ch) * sp;
            for i in base..base + sp {
                dx.data[i] = k * (count * grad.data[i] - dbeta - stats.xhat.data[i] * dgamma);
            }
        }
    }
    Ok((
        dx,
        Tensor::from_vec(&[c], sums.iter().map(|s| s.0).collect())?,
        Tensor::from_vec(&[c], sums.iter().map(|s| s.1).collect())?,
    ))
}

enum Cache<S> {
    Train(BatchStats<S>),
    Eval,
}

pub struct BatchNorm2d<S> {
    pub gamma: Param<S>,
    pub beta: Param<S>,
    pub running_mean: Param<S>,
    pub running_var: Param<S>,
    pub eps: S,
    pub momentum: S,
    cache: Option<Cache<S>>,
}

impl<S: Scalar> BatchNorm2d<S> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::new(Tensor::full(&[channels], S::one())),
            beta: Param::new(Tensor::zeros(&[channels])),
            running_mean: Param::buffer(Tensor::zeros(&[channels])),
            running_var: Param::buffer(Tensor::full(&[channels], S::one())),
            eps: S::of(BN_EPS),
            momentum: S::of(BN_MOMENTUM),
            cache: None,
        }
    }
}

impl<S: Scalar> Layer<S> for BatchNorm2d<S> {
    fn forward(&mut self, x: &Tensor<S>, mode: Mode) -> Result<Tensor<S>> {
        match mode {
            Mode::Train => {
                let (y, stats) = batch_norm_train(x, &self.gamma.value, &self.beta.value, self.eps)?;
                let (n, _, sp) = dims(x)?;
                let m = (n * sp) as f64;
                let unbias = S::of(m / (m - 1.0).max(1.0));
                let mom = self.momentum;
                for ch in 0..stats.mean.len() {
                    let rm = &mut self.running_mean.value.data[ch];
                    *rm = (S::one() - mom) * *rm + mom * stats.mean[ch];
                    let rv = &mut self.running_var.value.data[ch];
                    *rv = (S::one() - mom) * *rv + mom * stats.var[ch] * unbias;
                }
                self.cache = Some(Cache::Train(stats));
                Ok(y)
            }
            Mode::Eval => {
                self.cache = Some(Cache::Eval);
                batch_norm_eval(
                    x,
                    &self.gamma.value,
                    &self.beta.value,
                    &self.running_mean.value,
                    &self.running_var.value,
                    self.eps,
                )
            }
        }
    }

    fn backward(&mut self, grad: &Tensor<S>) -> Result<Tensor<S>> {
        match self.cache.as_ref().ok_or_else(|| missing_cache("batch_norm"))? {
            Cache::Train(stats) => {
                let (dx, dg, db) = batch_norm_backward(grad, &self.gamma.value, stats)?;
                self.gamma.grad.add_assign(&dg)?;
                self.beta.grad.add_assign(&db)?;
                Ok(dx)
            }
            Cache::Eval => {
                let (n, c, sp) = dims(grad)?;
                let mut dx = grad.clone();
                for s in 0..n {
                    for ch in 0..c {
                        let scale = self.gamma.value.data[ch]
                            / (self.running_var.value.data[ch] + self.eps).sqrt();
                        let base = (s * c + ch) * sp;
                        dx.data[base..base + sp].iter_mut().for_each(|v| *v *= scale);
                    }
                }
                Ok(dx)
            }
        }
    }

    fn collect_params<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param<S>)>) {
        out.push((join(prefix, "gamma"), &mut self.gamma));
        out.push((join(prefix, "beta"), &mut self.beta));
        out.push((join(prefix, "running_mean"), &mut self.running_mean));
        out.push((join(prefix, "running_var"), &mut self.running_var));
    }
}
