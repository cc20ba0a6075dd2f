//! Training hyperparameters.

use std::fmt;
use std::str::FromStr;

use crate::config::{format_list, parse_list, KvEntry};
use crate::error::{Error, Result};
use crate::loss::{LossVariant, Prior};
use crate::projector::{Activation, DEFAULT_EPSILON};
use crate::trainer::augment::AugmentConfig;

/// Either the uniform prior or explicit probabilities.
#[derive(Clone, Debug, Default, PartialEq)]
pub enum PriorSpec {
    #[default]
    Uniform,
    Explicit(Vec<f64>),
}

impl PriorSpec {
    pub fn build(&self, c: usize) -> Result<Prior> {
        match self {
            PriorSpec::Uniform => Ok(Prior::uniform(c)),
            PriorSpec::Explicit(q) => {
                if q.len() != c {
                    return Err(Error::param("prior", format!("{} entries for c={c}", q.len())));
                }
                Prior::new(q.clone())
            }
        }
    }
}

impl fmt::Display for PriorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PriorSpec::Uniform => f.write_str("uniform"),
            PriorSpec::Explicit(q) => f.write_str(&format_list(q)),
        }
    }
}

impl FromStr for PriorSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "uniform" {
            return Ok(PriorSpec::Uniform);
        }
        s.split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}")))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(PriorSpec::Explicit)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub f: usize,
    pub c: usize,
    pub batch: usize,
    pub epochs: usize,
    pub beta: f64,
    pub epsilon: f64,
    pub lr: f64,
    pub seed: u64,
    pub activation: Activation,
    pub loss_variant: LossVariant,
    pub prior: PriorSpec,
    pub hidden: Vec<usize>,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            f: 16,
            c: 16,
            batch: 64,
            epochs: 10,
            beta: crate::loss::DEFAULT_BETA,
            epsilon: DEFAULT_EPSILON,
            lr: 1e-4,
            seed: 0,
            activation: Activation::L2Norm,
            loss_variant: LossVariant::ForwardCe,
            prior: PriorSpec::Uniform,
            hidden: vec![64, 64],
            augment: AugmentConfig::default(),
        }
    }
}

/// Keys accepted by [`TrainConfig::set`].
pub const TRAIN_KEYS: &[&str] = &[
    "f",
    "c",
    "batch",
    "epochs",
    "beta",
    "epsilon",
    "lr",
    "train_seed",
    "activation",
    "loss",
    "prior",
    "hidden",
    "noise_std",
    "dropout_prob",
    "scale_jitter",
];

impl TrainConfig {
    /// Applies one entry. Returns `Ok(false)` when the key is not a training key.
    pub fn set(&mut self, e: &KvEntry) -> Result<bool> {
        match e.key.as_str() {
            "f" => self.f = e.parse()?,
            "c" => self.c = e.parse()?,
            "batch" => self.batch = e.parse()?,
            "epochs" => self.epochs = e.parse()?,
            "beta" => self.beta = e.parse()?,
            "epsilon" => self.epsilon = e.parse()?,
            "lr" => self.lr = e.parse()?,
            "train_seed" => self.seed = e.parse()?,
            "activation" => self.activation = e.parse()?,
            "loss" => self.loss_variant = e.parse()?,
            "prior" => self.prior = e.parse()?,
            "hidden" => self.hidden = parse_list(e)?,
            "noise_std" => self.augment.noise_std = e.parse()?,
            "dropout_prob" => self.augment.dropout_prob = e.parse()?,
            "scale_jitter" => self.augment.scale_jitter = e.parse()?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("f", self.f.to_string()),
            ("c", self.c.to_string()),
            ("batch", self.batch.to_string()),
            ("epochs", self.epochs.to_string()),
            ("beta", self.beta.to_string()),
            ("epsilon", self.epsilon.to_string()),
            ("lr", self.lr.to_string()),
            ("train_seed", self.seed.to_string()),
            ("activation", self.activation.to_string()),
            ("loss", self.loss_variant.to_string()),
            ("prior", self.prior.to_string()),
            ("hidden", format_list(&self.hidden)),
            ("noise_std", self.augment.noise_std.to_string()),
            ("dropout_prob", self.augment.dropout_prob.to_string()),
            ("scale_jitter", self.augment.scale_jitter.to_string()),
        ]
    }

    pub fn from_text(text: &str, source: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for e in crate::config::parse_kv(text, source)? {
            if !cfg.set(&e)? {
                return Err(e.error("unknown key"));
            }
        }
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        crate::config::format_kv(&self.to_pairs())
    }

    /// Every violated constraint, in a fixed order.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.f == 0 {
            out.push("f must be >= 1".to_string());
        }
        if self.c < 2 {
            out.push(format!("c must be >= 2, got {}", self.c));
        }
        if self.batch < 2 {
            out.push(format!("batch must be >= 2, got {}", self.batch));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0 / self.c.max(1) as f64) {
            out.push(format!(
                "epsilon must lie in (0, 1/c) = (0, {}), got {}",
                1.0 / self.c.max(1) as f64,
                self.epsilon
            ));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            out.push(format!("beta must be > 0, got {}", self.beta));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            out.push(format!("lr must be > 0, got {}", self.lr));
        }
        if self.hidden.contains(&0) {
            out.push("hidden widths must be > 0".to_string());
        }
        if let Err(e) = self.augment.validate() {
            out.push(e.to_string());
        }
        if self.c >= 2 {
            if let Err(e) = self.prior.build(self.c) {
                out.push(e.to_string());
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config {
                location: "training config".into(),
                reason: problems.join("; "),
            })
        }
    }

    /// `[d, hidden.., f]`.
    pub fn widths(&self, input_dim: usize) -> Vec<usize> {
        std::iter::once(input_dim)
            .chain(self.hidden.iter().copied())
            .chain(std::iter::once(self.f))
            .collect()
    }
}
