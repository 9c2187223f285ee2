use std::fmt;
use std::str::FromStr;

use crate::eventrep::{DEFAULT_BINS, DEFAULT_LAMBDA};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Desk,
    Paper,
}

/// Which parts of the pipeline are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    Full,
    /// The collapsed raw event map replaces the interpolated one.
    NoEi,
    /// Interpolated event map, but no fusion gate.
    NoOfm,
    /// RGB and normalized maps only.
    NoEvent,
}

impl Ablation {
    pub fn uses_ei(self) -> bool {
        matches!(self, Ablation::Full | Ablation::NoOfm)
    }

    pub fn uses_ofm(self) -> bool {
        !matches!(self, Ablation::NoOfm)
    }

    pub fn uses_events(self) -> bool {
        !matches!(self, Ablation::NoEvent)
    }

    /// Channels entering the fusion stage and the normal estimator.
    pub fn fused_channels(self) -> usize {
        if self.uses_events() {
            5
        } else {
            4
        }
    }
}

macro_rules! keyword_enum {
    ($ty:ty, $what:literal, $($name:literal => $v:expr),+ $(,)?) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s.trim() {
                    $($name => Ok($v),)+
                    other => Err(Error::invalid(format!(concat!("unknown ", $what, " `{}`"), other))),
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                $(if *self == $v { return f.write_str($name); })+
                unreachable!()
            }
        }
    };
}

keyword_enum!(Scale, "scale", "desk" => Scale::Desk, "paper" => Scale::Paper);
keyword_enum!(
    Ablation,
    "ablation",
    "full" => Ablation::Full,
    "no_ei" => Ablation::NoEi,
    "no_ofm" => Ablation::NoOfm,
    "no_event" => Ablation::NoEvent,
);

/// Network sizes and training hyper-parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    pub m: usize,
    /// EI-Net head width; down blocks use 2x and 4x this.
    pub base_channels: usize,
    pub sne_growth: usize,
    pub k_aug: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub scale: Scale,
    pub ablation: Ablation,
    pub seed: u64,
    pub lambda: f64,
    pub bins: usize,
    /// Pixels drawn (without replacement) per epoch; 0 uses every pixel.
    pub train_pixels: usize,
}

impl NetConfig {
    pub fn desk() -> Self {
        Self {
            m: 16,
            base_channels: 16,
            sne_growth: 12,
            k_aug: 4,
            batch_size: 256,
            epochs: 30,
            lr: 1e-3,
            scale: Scale::Desk,
            ablation: Ablation::Full,
            seed: 0,
            lambda: DEFAULT_LAMBDA,
            bins: DEFAULT_BINS,
            train_pixels: 256,
        }
    }

    pub fn paper() -> Self {
        Self {
            m: 32,
            base_channels: 32,
            sne_growth: 24,
            k_aug: 10,
            batch_size: 2048,
            epochs: 20,
            train_pixels: 0,
            scale: Scale::Paper,
            ..Self::desk()
        }
    }

    pub fn for_scale(scale: Scale) -> Self {
        match scale {
            Scale::Desk => Self::desk(),
            Scale::Paper => Self::paper(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m != 16 && self.m != 32 {
            return Err(Error::invalid(format!("m must be 16 or 32, got {}", self.m)));
        }
        if self.k_aug < 1 {
            return Err(Error::invalid("k_aug must be at least 1"));
        }
        if self.batch_size < 2 {
            return Err(Error::invalid("batch_size must be at least 2"));
        }
        if self.base_channels == 0 || self.sne_growth == 0 {
            return Err(Error::invalid("channel widths must be positive"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("invalid learning rate {}", self.lr)));
        }
        if !(self.lambda > 0.0) || self.bins == 0 {
            return Err(Error::invalid("lambda and bins must be positive"));
        }
        Ok(())
    }

    /// Parses `key = value` lines. `scale` selects the base preset, other
    /// keys override it; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::format(format!("line {}: expected `key = value`", no + 1)))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        let scale = match pairs.iter().find(|(k, _)| k == "scale") {
            Some((_, v)) => v.parse()?,
            None => Scale::Desk,
        };
        let mut cfg = Self::for_scale(scale);
        for (k, v) in &pairs {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::format(format!("bad value `{v}` for `{key}`")))
        }
        match key {
            "m" => self.m = num(key, value)?,
            "base_channels" => self.base_channels = num(key, value)?,
            "sne_growth" => self.sne_growth = num(key, value)?,
            "k_aug" => self.k_aug = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "lambda" => self.lambda = num(key, value)?,
            "bins" => self.bins = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "train_pixels" => self.train_pixels = num(key, value)?,
            "scale" => self.scale = value.parse()?,
            "ablation" => self.ablation = value.parse()?,
            other => return Err(Error::format(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        format!(
            "scale = {}\nm = {}\nbase_channels = {}\nsne_growth = {}\nk_aug = {}\nbatch_size = {}\n\
             epochs = {}\nlr = {:?}\nlambda = {:?}\nbins = {}\nseed = {}\ntrain_pixels = {}\nablation = {}\n",
            self.scale,
            self.m,
            self.base_channels,
            self.sne_growth,
            self.k_aug,
            self.batch_size,
            self.epochs,
            self.lr,
            self.lambda,
            self.bins,
            self.seed,
            self.train_pixels,
            self.ablation,
        )
    }
}

impl Default for NetConfig {
    fn default() -> Self {
        Self::desk()
    }
}
