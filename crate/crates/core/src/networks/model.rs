use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::blocks::{transition_block, DenseBlock, FusionGate, ResidualBlock, UnitNormalize};
use super::config::NetConfig;
use crate::diffcore::{
    concat_channels, split_channels, Act, BatchNorm2d, Conv2d, Flatten, GlobalAvgPool, Layer, Linear, Mode,
    Param, Scalar, Sequential, Tensor, Upsample2x,
};
use crate::{Error, Result};

pub const RESIDUAL_BLOCKS: usize = 16;
pub const DENSE_DEPTH: usize = 4;

/// Event interpolation network: sparse 2-channel event map to a dense
/// 1-channel map in `(0, 1)`.
pub struct EiNet<S> {
    body: Sequential<S>,
}

impl<S: Scalar> EiNet<S> {
    pub fn new(base: usize, rng: &mut impl Rng) -> Self {
        let (c1, c2, c3) = (base, 2 * base, 4 * base);
        let mut body = Sequential::new();
        body.push("head.conv", Conv2d::same(2, c1, 3, rng))
            .push("head.bn", BatchNorm2d::new(c1))
            .push("head.act", Act::relu());
        for (i, (cin, cout)) in [(c1, c2), (c2, c3)].into_iter().enumerate() {
            body.push(format!("down{i}.conv"), Conv2d::new(cin, cout, 5, 2, 2, rng))
                .push(format!("down{i}.bn"), BatchNorm2d::new(cout))
                .push(format!("down{i}.act"), Act::leaky());
        }
        for i in 0..RESIDUAL_BLOCKS {
            body.push(format!("res{i}"), ResidualBlock::new(c3, rng));
        }
        for (i, (cin, cout)) in [(c3, c2), (c2, c1)].into_iter().enumerate() {
            body.push(format!("up{i}.resize"), Upsample2x::new())
                .push(format!("up{i}.conv"), Conv2d::same(cin, cout, 3, rng))
                .push(format!("up{i}.bn"), BatchNorm2d::new(cout))
                .push(format!("up{i}.act"), Act::leaky());
        }
        body.push("pred.conv", Conv2d::same(c1, 1, 3, rng))
            .push("pred.act", Act::sigmoid());
        Self { body }
    }
}

impl<S: Scalar> Layer<S> for EiNet<S> {
    fn forward(&mut self, x: &Tensor<S>, mode: Mode) -> Result<Tensor<S>> {
        let (_, c, h, w) = x.dims4("ei_net")?;
        if c != 2 {
            return Err(Error::ShapeMismatch {
                op: "ei_net channels",
                expected: vec![2],
                actual: vec![c],
            });
        }
        if h % 4 != 0 || w % 4 != 0 {
            return Err(Error::IncompatibleResolution(h));
        }
        self.body.forward(x, mode)
    }

    fn backward(&mut self, grad: &Tensor<S>) -> Result<Tensor<S>> {
        self.body.backward(grad)
    }

    fn collect_params<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param<S>)>) {
        self.body.collect_params(prefix, out);
    }
}

/// How SNE-Net turns its last feature map into a vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Readout {
    GlobalPool,
    Flatten,
}

/// Surface normal estimation network: dense and transition blocks, then a
/// linear head normalized to a unit vector.
pub struct SneNet<S> {
    body: Sequential<S>,
}

impl<S: Scalar> SneNet<S> {
    pub fn new(inputs: usize, m: usize, growth: usize, readout: Readout, rng: &mut impl Rng) -> Self {
        let mut body = Sequential::new();
        let head = 2 * growth;
        body.push("head.conv", Conv2d::same(inputs, head, 3, rng))
            .push("head.act", Act::relu());
        let mut c = head;
        for i in 0..2 {
            let db = DenseBlock::new(c, growth, DENSE_DEPTH, rng);
            let out = db.outputs();
            body.push(format!("dense{i}"), db);
            c = out / 2;
            body.push(format!("trans{i}"), transition_block(out, c, rng));
        }
        let features = match readout {
            Readout::GlobalPool => {
                body.push("pool", GlobalAvgPool::new());
                c
            }
            Readout::Flatten => {
                body.push("flatten", Flatten::new());
                c * (m / 4) * (m / 4)
            }
        };
        body.push("fc", Linear::new(features, 3, rng))
            .push("normalize", UnitNormalize::new());
        Self { body }
    }
}

impl<S: Scalar> Layer<S> for SneNet<S> {
    fn forward(&mut self, x: &Tensor<S>, mode: Mode) -> Result<Tensor<S>> {
        self.body.forward(x, mode)
    }

    fn backward(&mut self, grad: &Tensor<S>) -> Result<Tensor<S>> {
        self.body.backward(grad)
    }

    fn collect_params<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param<S>)>) {
        self.body.collect_params(prefix, out);
    }
}

/// One mini-batch of network inputs.
#[derive(Debug, Clone)]
pub struct Batch<S> {
    /// `N x 4 x m x m`: r, g, b and the normalized map.
    pub rgbn: Tensor<S>,
    /// `N x 2 x m x m`: positive and negative event maps.
    pub events: Tensor<S>,
    /// `N x 3` ground-truth normals, if labeled.
    pub normals: Option<Tensor<S>>,
}

impl<S: Scalar> Batch<S> {
    pub fn len(&self) -> usize {
        self.rgbn.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The normalized map `O_n` as `N x 1 x m x m`.
    pub fn normalized(&self) -> Result<Tensor<S>> {
        Ok(split_channels(&self.rgbn, &[3, 1])?.pop().expect("two parts"))
    }
}

/// Forward outputs needed by the losses.
#[derive(Debug, Clone)]
pub struct Prediction<S> {
    /// `N x 3` unit normals.
    pub normals: Tensor<S>,
    /// EI-Net output `N x 1 x m x m`, when EI-Net is active.
    pub interpolated: Option<Tensor<S>>,
}

/// EI-Net, fusion gate and SNE-Net wired according to the ablation switch.
pub struct EfpsNet<S> {
    pub config: NetConfig,
    pub readout: Readout,
    pub ei: Option<EiNet<S>>,
    pub ofm: Option<FusionGate<S>>,
    pub sne: SneNet<S>,
}

impl<S: Scalar> EfpsNet<S> {
    pub fn new(config: &NetConfig) -> Result<Self> {
        Self::with_readout(config, Readout::GlobalPool)
    }

    pub fn with_readout(config: &NetConfig, readout: Readout) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let ab = config.ablation;
        let ei = ab.uses_ei().then(|| EiNet::new(config.base_channels, &mut rng));
        let ofm = ab.uses_ofm().then(|| FusionGate::new(ab.fused_channels(), &mut rng));
        let sne = SneNet::new(ab.fused_channels(), config.m, config.sne_growth, readout, &mut rng);
        Ok(Self {
            config: config.clone(),
            readout,
            ei,
            ofm,
            sne,
        })
    }

    pub fn forward(&mut self, batch: &Batch<S>, mode: Mode) -> Result<Prediction<S>> {
        let m = self.config.m;
        let n = batch.len();
        batch.rgbn.expect_shape("rgbn batch", &[n, 4, m, m])?;
        batch.events.expect_shape("event batch", &[n, 2, m, m])?;
        let ab = self.config.ablation;
        let (fused_in, interpolated) = if let Some(ei) = self.ei.as_mut() {
            let e_hat = ei.forward(&batch.events, mode)?;
            (concat_channels(&[&batch.rgbn, &e_hat])?, Some(e_hat))
        } else if ab.uses_events() {
            let collapsed = collapse_events(&batch.events)?;
            (concat_channels(&[&batch.rgbn, &collapsed])?, None)
        } else {
            (batch.rgbn.clone(), None)
        };
        let fused = match self.ofm.as_mut() {
            Some(ofm) => ofm.forward(&fused_in, mode)?,
            None => fused_in,
        };
        let normals = self.sne.forward(&fused, mode)?;
        Ok(Prediction { normals, interpolated })
    }

    /// Back-propagates `d_normals` (and `d_interpolated`, the loss gradient
    /// reaching EI-Net's output directly) through the last forward call.
    pub fn backward(&mut self, d_normals: &Tensor<S>, d_interpolated: Option<&Tensor<S>>) -> Result<()> {
        let d_fused = self.sne.backward(d_normals)?;
        let d_in = match self.ofm.as_mut() {
            Some(ofm) => ofm.backward(&d_fused)?,
            None => d_fused,
        };
        if let Some(ei) = self.ei.as_mut() {
            let mut d_e = split_channels(&d_in, &[4, 1])?.pop().expect("two parts");
            if let Some(extra) = d_interpolated {
                d_e.add_assign(extra)?;
            }
            ei.backward(&d_e)?;
        }
        Ok(())
    }

    pub fn params(&mut self) -> Vec<(String, &mut Param<S>)> {
        let mut out = Vec::new();
        if let Some(ei) = self.ei.as_mut() {
            ei.collect_params("ei", &mut out);
        }
        if let Some(ofm) = self.ofm.as_mut() {
            ofm.collect_params("ofm", &mut out);
        }
        self.sne.collect_params("sne", &mut out);
        out
    }

    pub fn zero_grad(&mut self) {
        for (_, p) in self.params() {
            p.zero_grad();
        }
    }

    pub fn trainable_count(&mut self) -> usize {
        self.params()
            .iter()
            .filter(|(_, p)| p.trainable)
            .map(|(_, p)| p.value.len())
            .sum()
    }

    pub fn all_finite(&mut self) -> bool {
        self.params().iter().all(|(_, p)| p.value.all_finite())
    }
}

/// `(e+ + e-) / 2` as a single channel.
pub fn collapse_events<S: Scalar>(events: &Tensor<S>) -> Result<Tensor<S>> {
    let (n, c, h, w) = events.dims4("collapse_events")?;
    if c != 2 {
        return Err(Error::ShapeMismatch {
            op: "collapse_events",
            expected: vec![n, 2, h, w],
            actual: events.shape().to_vec(),
        });
    }
    let parts = split_channels(events, &[1, 1])?;
    let half = S::of(0.5);
    parts[0].zip_map(&parts[1], |a, b| (a + b) * half)
}
