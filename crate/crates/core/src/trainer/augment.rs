//! Stochastic views of a batch of feature vectors.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

pub const DEFAULT_NOISE_STD: f64 = 0.03;

/// Per-sample multiplicative jitter, per-feature dropout, additive noise;
/// applied in that order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentConfig {
    pub noise_std: f64,
    pub dropout_prob: f64,
    /// Each sample is scaled by a factor drawn uniformly from `[1 - s, 1 + s]`.
    pub scale_jitter: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            noise_std: DEFAULT_NOISE_STD,
            dropout_prob: 0.0,
            scale_jitter: 0.0,
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        AugmentConfig {
            noise_std: 0.0,
            dropout_prob: 0.0,
            scale_jitter: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::param("noise_std", format!("must be >= 0, got {}", self.noise_std)));
        }
        if !(0.0..1.0).contains(&self.dropout_prob) {
            return Err(Error::param(
                "dropout_prob",
                format!("must lie in [0, 1), got {}", self.dropout_prob),
            ));
        }
        if !(self.scale_jitter >= 0.0 && self.scale_jitter.is_finite()) {
            return Err(Error::param(
                "scale_jitter",
                format!("must be >= 0, got {}", self.scale_jitter),
            ));
        }
        Ok(())
    }
}

fn view(x: &Tensor, cfg: &AugmentConfig, rng: &mut rng::Rng) -> Tensor {
    let mut out = x.clone();
    let noise = Normal::new(0.0, cfg.noise_std.max(0.0)).expect("validated std");
    for i in 0..out.rows() {
        let factor = if cfg.scale_jitter > 0.0 {
            rng.random_range(1.0 - cfg.scale_jitter..=1.0 + cfg.scale_jitter)
        } else {
            1.0
        };
        for v in out.row_mut(i) {
            *v *= factor;
            if cfg.dropout_prob > 0.0 && rng.random::<f64>() < cfg.dropout_prob {
                *v = 0.0;
            }
            if cfg.noise_std > 0.0 {
                *v += noise.sample(rng);
            }
        }
    }
    out
}

/// Two independent views of `x`, reproducible from `seed`.
pub fn augment(x: &Tensor, cfg: &AugmentConfig, seed: u64) -> Result<(Tensor, Tensor)> {
    cfg.validate()?;
    let a = view(x, cfg, &mut rng::stream(seed, 1));
    let b = view(x, cfg, &mut rng::stream(seed, 2));
    Ok((a, b))
}
