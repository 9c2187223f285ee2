use std::sync::mpsc::sync_channel;

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::loss::{batch_mae_loss, batch_scale_invariant_loss, total_loss};
use super::model::{Batch, EfpsNet};
use super::config::NetConfig;
use crate::diffcore::{cosine_lr, Adam, Mode, Scalar, Tensor};
use crate::obsmap::{augmentation_angle, rotate_sample, ObservationMapSet};
use crate::{Error, Result};

/// Observation-map sets of one object, labeled with ground-truth normals.
#[derive(Debug, Clone)]
pub struct LabeledObject {
    pub name: String,
    pub samples: Vec<ObservationMapSet>,
}

/// Stacks samples into network inputs. Unlabeled samples leave
/// `normals` empty.
pub fn assemble_batch<S: Scalar>(samples: &[&ObservationMapSet], m: usize) -> Result<Batch<S>> {
    let n = samples.len();
    let cells = m * m;
    let mut rgbn = Vec::with_capacity(n * 4 * cells);
    let mut events = Vec::with_capacity(n * 2 * cells);
    let mut normals = Vec::with_capacity(3 * n);
    let labeled = samples.iter().all(|s| s.normal.is_some());
    for s in samples {
        if s.m() != m {
            return Err(Error::invalid(format!("sample has m = {}, network expects {m}", s.m())));
        }
        let ch = s.channels();
        for map in &ch[..4] {
            rgbn.extend(map.data.iter().map(|&v| S::of(v)));
        }
        for map in &ch[4..] {
            events.extend(map.data.iter().map(|&v| S::of(v)));
        }
        if let (true, Some(nrm)) = (labeled, s.normal) {
            normals.extend(nrm.iter().map(|&v| S::of(v)));
        }
    }
    Ok(Batch {
        rgbn: Tensor::from_vec(&[n, 4, m, m], rgbn)?,
        events: Tensor::from_vec(&[n, 2, m, m], events)?,
        normals: if labeled { Some(Tensor::from_vec(&[n, 3], normals)?) } else { None },
    })
}

/// Loss values of one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub l_e: f64,
    pub l_n: f64,
    pub total: f64,
}

/// Forward pass plus loss terms, returning each term's output gradients
/// separately (L_e, then L_n).
pub fn forward_losses<S: Scalar>(
    net: &mut EfpsNet<S>,
    batch: &Batch<S>,
    mode: Mode,
) -> Result<(LossBreakdown, Option<Tensor<S>>, Tensor<S>)> {
    let truth = batch
        .normals
        .as_ref()
        .ok_or_else(|| Error::invalid("training batch has no ground-truth normals"))?;
    let pred = net.forward(batch, mode)?;
    let (l_n, d_normals) = batch_mae_loss(&pred.normals, truth)?;
    let (l_e, d_interp) = match &pred.interpolated {
        Some(e_hat) => {
            let (l, g) = batch_scale_invariant_loss(e_hat, &batch.normalized()?)?;
            (l, Some(g))
        }
        None => (0.0, None),
    };
    Ok((
        LossBreakdown {
            l_e,
            l_n,
            total: total_loss(l_e, l_n),
        },
        d_interp,
        d_normals,
    ))
}

/// Accumulates gradients of `L_total` for one batch into the parameters.
pub fn loss_and_backward<S: Scalar>(net: &mut EfpsNet<S>, batch: &Batch<S>) -> Result<LossBreakdown> {
    let (loss, d_interp, d_normals) = forward_losses(net, batch, Mode::Train)?;
    net.backward(&d_normals, d_interp.as_ref())?;
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub steps: Vec<StepRecord>,
    /// Samples visited per epoch, after augmentation.
    pub samples_per_epoch: usize,
}

impl TrainHistory {
    /// Mean total loss of each epoch.
    pub fn epoch_means(&self) -> Vec<f64> {
        let epochs = self.steps.iter().map(|s| s.epoch + 1).max().unwrap_or(0);
        (0..epochs)
            .map(|e| {
                let v: Vec<f64> = self.steps.iter().filter(|s| s.epoch == e).map(|s| s.loss.total).collect();
                v.iter().sum::<f64>() / v.len().max(1) as f64
            })
            .collect()
    }
}

/// Per-epoch sample order: `(sample index, rotation index)` pairs.
pub fn epoch_plan(
    total: usize,
    config: &NetConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<(usize, usize)> {
    let mut pixels: Vec<usize> = (0..total).collect();
    pixels.shuffle(rng);
    if config.train_pixels > 0 && config.train_pixels < total {
        pixels.truncate(config.train_pixels);
    }
    let mut plan: Vec<(usize, usize)> = pixels
        .iter()
        .flat_map(|&p| (0..config.k_aug).map(move |k| (p, k)))
        .collect();
    plan.shuffle(rng);
    plan
}

fn batches_of(plan_len: usize, batch_size: usize) -> usize {
    let full = plan_len / batch_size;
    if plan_len % batch_size >= 2 {
        full + 1
    } else {
        full
    }
}

/// Observer for training progress.
pub trait TrainObserver {
    fn on_step(&mut self, _record: &StepRecord) {}
}

impl TrainObserver for () {}

impl<F: FnMut(&StepRecord)> TrainObserver for F {
    fn on_step(&mut self, record: &StepRecord) {
        self(record)
    }
}

/// Trains a fresh network on every sample of `objects`.
pub fn train(objects: &[LabeledObject], config: &NetConfig) -> Result<(EfpsNet<f32>, TrainHistory)> {
    let mut net = EfpsNet::new(config)?;
    let history = train_network(&mut net, objects, &mut ())?;
    Ok((net, history))
}

/// Trains `net` in place with the schedule in its config. Batches are
/// assembled and augmented on a producer thread feeding a bounded queue.
pub fn train_network<S: Scalar>(
    net: &mut EfpsNet<S>,
    objects: &[LabeledObject],
    observer: &mut dyn TrainObserver,
) -> Result<TrainHistory> {
    let config = net.config.clone();
    let samples: Vec<&ObservationMapSet> = objects.iter().flat_map(|o| o.samples.iter()).collect();
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if samples.iter().any(|s| s.normal.is_none()) {
        return Err(Error::invalid("training samples need ground-truth normals"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_da7a);
    let plans: Vec<Vec<(usize, usize)>> =
        (0..config.epochs).map(|_| epoch_plan(samples.len(), &config, &mut rng)).collect();
    let per_epoch = plans.first().map_or(0, Vec::len);
    let steps_per_epoch = batches_of(per_epoch, config.batch_size);
    let total_steps = steps_per_epoch * config.epochs;
    let mut history = TrainHistory {
        steps: Vec::with_capacity(total_steps),
        samples_per_epoch: per_epoch,
    };
    if total_steps == 0 {
        return Ok(history);
    }
    let mut adam = Adam::new();
    let (tx, rx) = sync_channel::<Result<(usize, Batch<S>)>>(2);
    std::thread::scope(|scope| -> Result<()> {
        let samples = &samples;
        let plans = &plans;
        let config = &config;
        scope.spawn(move || {
            for (epoch, plan) in plans.iter().enumerate() {
                for chunk in plan.chunks(config.batch_size).filter(|c| c.len() >= 2) {
                    let rotated: Vec<ObservationMapSet> = chunk
                        .iter()
                        .map(|&(i, k)| {
                            if k == 0 {
                                samples[i].clone()
                            } else {
                                rotate_sample(samples[i], augmentation_angle(k, config.k_aug))
                            }
                        })
                        .collect();
                    let refs: Vec<&ObservationMapSet> = rotated.iter().collect();
                    let item = assemble_batch(&refs, config.m).map(|b| (epoch, b));
                    if tx.send(item).is_err() {
                        return;
                    }
                }
            }
        });
        for step in 0..total_steps {
            let (epoch, batch) = rx.recv().map_err(|_| Error::invalid("batch producer stopped"))??;
            let lr = cosine_lr(step, total_steps, config.lr, 0.0)?;
            net.zero_grad();
            let loss = loss_and_backward(net, &batch)?;
            if !loss.total.is_finite() {
                return Err(Error::TrainingDiverged { step });
            }
            adam.update(&mut net.params(), lr)?;
            if !net.all_finite() {
                return Err(Error::TrainingDiverged { step });
            }
            let record = StepRecord { epoch, step, lr, loss };
            observer.on_step(&record);
            history.steps.push(record);
        }
        drop(rx);
        Ok(())
    })?;
    Ok(history)
}

/// Per-object angular error.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectScore {
    pub name: String,
    pub pixels: usize,
    pub mae_deg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub objects: Vec<ObjectScore>,
    /// Mean of the per-object errors.
    pub average_deg: f64,
}

pub const EVAL_BATCH: usize = 512;

/// Predicts unit normals for `samples` in eval mode.
pub fn predict<S: Scalar>(net: &mut EfpsNet<S>, samples: &[ObservationMapSet]) -> Result<Vec<Vector3<f64>>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_BATCH) {
        let refs: Vec<&ObservationMapSet> = chunk.iter().collect();
        let mut batch: Batch<S> = assemble_batch(&refs, net.config.m)?;
        batch.normals = None;
        let pred = net.forward(&batch, Mode::Eval)?;
        for row in pred.normals.data.chunks(3) {
            out.push(Vector3::new(row[0].as_f64(), row[1].as_f64(), row[2].as_f64()));
        }
    }
    Ok(out)
}

/// Mean angular error in degrees between paired normals; lengths are ignored.
pub fn mean_angular_error_deg(truth: &[Vector3<f64>], pred: &[Vector3<f64>]) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::EmptyMask);
    }
    if truth.len() != pred.len() {
        return Err(Error::invalid("prediction count differs from truth count"));
    }
    let sum: f64 = truth
        .iter()
        .zip(pred)
        .map(|(t, p)| t.normalize().dot(&p.normalize()).clamp(-1.0, 1.0).acos().to_degrees())
        .sum();
    Ok(sum / truth.len() as f64)
}

/// Per-object and average MAE over every labeled pixel.
pub fn evaluate<S: Scalar>(net: &mut EfpsNet<S>, objects: &[LabeledObject]) -> Result<EvalReport> {
    if objects.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut scores = Vec::with_capacity(objects.len());
    for obj in objects {
        let truth: Vec<Vector3<f64>> = obj
            .samples
            .iter()
            .map(|s| s.normal.ok_or_else(|| Error::invalid(format!("{}: unlabeled pixel", obj.name))))
            .collect::<Result<_>>()?;
        if truth.is_empty() {
            return Err(Error::EmptyMask);
        }
        let pred = predict(net, &obj.samples)?;
        scores.push(ObjectScore {
            name: obj.name.clone(),
            pixels: truth.len(),
            mae_deg: mean_angular_error_deg(&truth, &pred)?,
        });
    }
    let average_deg = scores.iter().map(|s| s.mae_deg).sum::<f64>() / scores.len() as f64;
    Ok(EvalReport {
        objects: scores,
        average_deg,
    })
}
