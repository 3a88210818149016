//! Run configuration: flat `key=value` text with dotted keys.
//!
//! ```text
//! # comment
//! seed=42
//! net.embed_dim=32
//! net.hidden_dims=64,64
//! train.loss_mode=hetero
//! ```
//!
//! Unknown keys are rejected by name. Missing keys keep their defaults.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::adam::AdamConfig;
use crate::dataset::SynthConfig;
use crate::error::{Error, Result};
use crate::loss::Margins;
use crate::net::{Activation, NetConfig};
use crate::sampler::{DomainPolicy, TupleSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossMode {
    Hetero,
    /// Plain triplet loss on (anchor, same-domain positive, one same-domain negative).
    TripletBaseline,
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossMode::Hetero => "hetero",
            LossMode::TripletBaseline => "triplet_baseline",
        })
    }
}

impl FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hetero" => Ok(LossMode::Hetero),
            "triplet_baseline" => Ok(LossMode::TripletBaseline),
            _ => Err(Error::config(format!("unknown loss mode '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub train_fraction: f64,
    pub enroll_per_identity: usize,
    pub strict: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            enroll_per_identity: 2,
            strict: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub synth: SynthConfig,
    /// `net.input_dim` is taken from the data unless set explicitly.
    pub net: NetConfig,
    pub input_dim_override: Option<usize>,
    pub margins: Margins,
    pub tuple_spec: TupleSpec,
    pub optimizer: AdamConfig,
    pub epochs: usize,
    pub tuples_per_epoch: usize,
    pub batch_size: usize,
    pub loss_mode: LossMode,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            synth: SynthConfig::default(),
            net: NetConfig::default(),
            input_dim_override: None,
            margins: Margins::default(),
            tuple_spec: TupleSpec::default(),
            optimizer: AdamConfig::default(),
            epochs: 30,
            tuples_per_epoch: 2000,
            batch_size: 32,
            loss_mode: LossMode::Hetero,
            eval: EvalConfig::default(),
        }
    }
}

fn value<T: FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.parse::<T>()
        .map_err(|_| Error::config(format!("invalid value '{raw}' for key '{key}'")))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, raw) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(i + 1, format!("expected key=value, got '{line}'")))?;
            cfg.set(key.trim(), raw.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        match key {
            "seed" => {
                self.seed = value(key, raw)?;
                self.synth.seed = self.seed;
            }
            "synth.n_identities" => self.synth.n_identities = value(key, raw)?,
            "synth.samples_per_identity_per_domain" => {
                self.synth.samples_per_identity_per_domain = value(key, raw)?
            }
            "synth.feature_dim" => self.synth.feature_dim = value(key, raw)?,
            "synth.cluster_spread" => self.synth.cluster_spread = value(key, raw)?,
            "synth.rotation_angle_degrees" => {
                self.synth.domain_shift.rotation_angle_degrees = value(key, raw)?
            }
            "synth.offset_magnitude" => self.synth.domain_shift.offset_magnitude = value(key, raw)?,
            "synth.noise_scale" => self.synth.domain_shift.noise_scale = value(key, raw)?,
            "net.input_dim" => self.input_dim_override = Some(value(key, raw)?),
            "net.hidden_dims" => {
                self.net.hidden_dims = if raw.is_empty() {
                    Vec::new()
                } else {
                    raw.split(',')
                        .map(|d| value::<usize>(key, d.trim()))
                        .collect::<Result<_>>()?
                }
            }
            "net.embed_dim" => self.net.embed_dim = value(key, raw)?,
            "net.activation" => {
                self.net.activation = raw
                    .parse::<Activation>()
                    .map_err(|_| Error::config(format!("invalid value '{raw}' for key '{key}'")))?
            }
            "net.normalize_output" => self.net.normalize_output = value(key, raw)?,
            "margins.alpha1" => self.margins.alpha1 = value(key, raw)?,
            "margins.alpha2" => self.margins.alpha2 = value(key, raw)?,
            "sampler.k" => self.tuple_spec.k = value(key, raw)?,
            "sampler.domain_policy" => {
                self.tuple_spec.domain_policy = raw
                    .parse::<DomainPolicy>()
                    .map_err(|_| Error::config(format!("invalid value '{raw}' for key '{key}'")))?
            }
            "sampler.anchor_symmetric" => self.tuple_spec.anchor_symmetric = value(key, raw)?,
            "sampler.max_retries" => self.tuple_spec.max_retries = value(key, raw)?,
            "optim.lr" => self.optimizer.learning_rate = value(key, raw)?,
            "optim.beta1" => self.optimizer.beta1 = value(key, raw)?,
            "optim.beta2" => self.optimizer.beta2 = value(key, raw)?,
            "optim.epsilon" => self.optimizer.epsilon = value(key, raw)?,
            "optim.decay" => self.optimizer.decay = value(key, raw)?,
            "train.epochs" => self.epochs = value(key, raw)?,
            "train.tuples_per_epoch" => self.tuples_per_epoch = value(key, raw)?,
            "train.batch_size" => self.batch_size = value(key, raw)?,
            "train.loss_mode" => self.loss_mode = value(key, raw)?,
            "eval.train_fraction" => self.eval.train_fraction = value(key, raw)?,
            "eval.enroll_per_identity" => self.eval.enroll_per_identity = value(key, raw)?,
            "eval.strict" => self.eval.strict = value(key, raw)?,
            other => return Err(Error::config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Overrides the run seed (and the generator seed with it).
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.synth.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        let mut net = self.net.clone();
        net.input_dim = self.input_dim_override.unwrap_or(1);
        net.validate()?;
        self.margins.validate()?;
        self.tuple_spec.validate()?;
        self.optimizer.validate()?;
        if self.tuples_per_epoch == 0 {
            return Err(Error::config("train.tuples_per_epoch must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size must be >= 1"));
        }
        if !(self.eval.train_fraction > 0.0 && self.eval.train_fraction < 1.0) {
            return Err(Error::config("eval.train_fraction must lie in (0, 1)"));
        }
        if self.eval.enroll_per_identity == 0 {
            return Err(Error::config("eval.enroll_per_identity must be >= 1"));
        }
        Ok(())
    }

    /// Network config for data with `feature_dim` features.
    pub fn net_config_for(&self, feature_dim: usize) -> Result<NetConfig> {
        if let Some(d) = self.input_dim_override {
            if d != feature_dim {
                return Err(Error::shape(format!(
                    "net.input_dim={d} but data has {feature_dim} features"
                )));
            }
        }
        let cfg = NetConfig {
            input_dim: feature_dim,
            ..self.net.clone()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
