//! The two-term objective, its reverse-KL variant and the lower-bound
//! certificate.
//!
//! The invariance term is a row-averaged cross-entropy `CE(P, P')` with `P`
//! as the target side. The prior term either matches the code usage
//! (column mean of `P`) to the prior by cross-entropy, or uses the reverse
//! divergence `KL(pbar || q)`, which stays finite when a code is unused.
//! All logarithms are natural.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{
    cross_entropy_rows_value, prior_cross_entropy_value, reverse_kl_value, Var, LOG_FLOOR,
};
use crate::error::{Error, Result};
use crate::projector::ProbMatrix;

pub const DEFAULT_BETA: f64 = 0.1;

/// Grid of invariance weights used for sweeps.
pub const BETA_GRID: [f64; 9] = [0.01, 0.05, 0.1, 0.25, 0.5, 1.0, 2.5, 5.0, 10.0];

/// Prior probability over codes.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Prior {
    q: Vec<f64>,
}

impl Prior {
    pub fn uniform(c: usize) -> Self {
        Prior {
            q: vec![1.0 / c as f64; c],
        }
    }

    pub fn new(q: Vec<f64>) -> Result<Self> {
        if q.is_empty() {
            return Err(Error::param("prior", "empty"));
        }
        if q.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::param("prior", "entries must be finite and non-negative"));
        }
        let s: f64 = q.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(Error::param("prior", format!("must sum to 1, sums to {s}")));
        }
        Ok(Prior { q })
    }

    pub fn c(&self) -> usize {
        self.q.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.q
    }

    pub fn entropy(&self) -> f64 {
        entropy(&self.q)
    }
}

/// Shannon entropy in nats with `0 log 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    p.iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| -v * v.ln())
        .sum()
}

/// `KL(a || b)` in nats; infinite when `b` misses mass that `a` has.
pub fn kl_divergence(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .filter(|(&x, _)| x > 0.0)
        .map(|(&x, &y)| if y > 0.0 { x * (x / y).ln() } else { f64::INFINITY })
        .sum()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    #[default]
    ForwardCe,
    ReverseKl,
}

impl fmt::Display for LossVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossVariant::ForwardCe => "forward_ce",
            LossVariant::ReverseKl => "reverse_kl",
        })
    }
}

impl FromStr for LossVariant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "forward_ce" => Ok(LossVariant::ForwardCe),
            "reverse_kl" => Ok(LossVariant::ReverseKl),
            other => Err(format!(
                "unknown loss variant `{other}` (expected forward_ce or reverse_kl)"
            )),
        }
    }
}

/// Value of every term of one loss evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub invariance: f64,
    pub prior_matching: f64,
    pub total: f64,
    pub beta: f64,
    pub lower_bound: f64,
    pub certificate_gap: f64,
    pub variant: LossVariant,
    /// A log argument hit the floor in the invariance term.
    pub invariance_floored: bool,
    /// A code's mean usage hit the floor in the forward prior term.
    pub prior_floored: bool,
}

fn check_pair(p: &ProbMatrix, p_prime: &ProbMatrix) -> Result<()> {
    p.values.same_shape(&p_prime.values, "invariance_loss")
}

fn check_prior(p: &ProbMatrix, prior: &Prior) -> Result<()> {
    if p.c() != prior.c() {
        return Err(Error::Shape {
            op: "prior_matching_loss",
            left: p.values.shape(),
            right: (1, prior.c()),
        });
    }
    Ok(())
}

/// `-(1/n) sum_ij p_ij log p'_ij`.
pub fn invariance_loss(p: &ProbMatrix, p_prime: &ProbMatrix) -> Result<f64> {
    check_pair(p, p_prime)?;
    Ok(cross_entropy_rows_value(&p.values, &p_prime.values)?.0)
}

/// `-sum_j q_j log((1/n) sum_i p_ij)`.
pub fn prior_matching_loss(p: &ProbMatrix, prior: &Prior) -> Result<f64> {
    check_prior(p, prior)?;
    Ok(prior_cross_entropy_value(&p.values, prior.probs())?.0)
}

/// `KL(pbar || q)` with `pbar` the column mean of `P`.
pub fn reverse_prior_matching_loss(p: &ProbMatrix, prior: &Prior) -> Result<f64> {
    check_prior(p, prior)?;
    reverse_kl_value(&p.values, prior.probs())
}

/// Smallest value the objective can reach on the eps-bounded simplex.
///
/// For the forward variant this is
/// `-beta (1-eps(c-1)) log(1-eps(c-1)) - beta eps (c-1) log eps + H(q)`;
/// the reverse variant drops `H(q)` because its prior term bottoms out at 0.
pub fn lower_bound(prior: &Prior, beta: f64, epsilon: f64, variant: LossVariant) -> f64 {
    let c = prior.c() as f64;
    let top = 1.0 - epsilon * (c - 1.0);
    let mut bound = -beta * top * top.ln();
    if epsilon > 0.0 {
        bound -= beta * epsilon * (c - 1.0) * epsilon.ln();
    }
    match variant {
        LossVariant::ForwardCe => bound + prior.entropy(),
        LossVariant::ReverseKl => bound,
    }
}

/// `beta * invariance + prior term`, with the certificate against
/// [`lower_bound`] at `epsilon`.
pub fn total_loss(
    p: &ProbMatrix,
    p_prime: &ProbMatrix,
    prior: &Prior,
    beta: f64,
    epsilon: f64,
    variant: LossVariant,
) -> Result<LossBreakdown> {
    check_beta(beta)?;
    check_pair(p, p_prime)?;
    check_prior(p, prior)?;
    let (invariance, invariance_floored) = cross_entropy_rows_value(&p.values, &p_prime.values)?;
    let (prior_matching, prior_floored) = match variant {
        LossVariant::ForwardCe => prior_cross_entropy_value(&p.values, prior.probs())?,
        LossVariant::ReverseKl => (reverse_kl_value(&p.values, prior.probs())?, false),
    };
    Ok(breakdown(
        invariance,
        prior_matching,
        beta,
        lower_bound(prior, beta, epsilon, variant),
        variant,
        invariance_floored,
        prior_floored,
    ))
}

pub(crate) fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::param("beta", format!("must be positive, got {beta}")));
    }
    Ok(())
}

fn breakdown(
    invariance: f64,
    prior_matching: f64,
    beta: f64,
    lower_bound: f64,
    variant: LossVariant,
    invariance_floored: bool,
    prior_floored: bool,
) -> LossBreakdown {
    let total = beta * invariance + prior_matching;
    LossBreakdown {
        invariance,
        prior_matching,
        total,
        beta,
        lower_bound,
        certificate_gap: total - lower_bound,
        variant,
        invariance_floored,
        prior_floored,
    }
}

/// The objective on a tape, for two probability nodes of identical shape.
///
/// Returns the scalar loss node and the breakdown of its forward value.
pub fn total_loss_on_tape<'t>(
    p: Var<'t>,
    p_prime: Var<'t>,
    prior: &Prior,
    beta: f64,
    epsilon: f64,
    variant: LossVariant,
) -> Result<(Var<'t>, LossBreakdown)> {
    check_beta(beta)?;
    let inv = p.cross_entropy_rows(p_prime)?;
    let pri = match variant {
        LossVariant::ForwardCe => p.prior_cross_entropy(prior.probs())?,
        LossVariant::ReverseKl => p.reverse_kl_prior(prior.probs())?,
    };
    let loss = inv.scale(beta).add(pri)?;
    let (_, invariance_floored) = cross_entropy_rows_value(&p.value(), &p_prime.value())?;
    let prior_floored = match variant {
        LossVariant::ForwardCe => prior_cross_entropy_value(&p.value(), prior.probs())?.1,
        LossVariant::ReverseKl => false,
    };
    let b = breakdown(
        inv.item(),
        pri.item(),
        beta,
        lower_bound(prior, beta, epsilon, variant),
        variant,
        invariance_floored,
        prior_floored,
    );
    Ok((loss, b))
}

/// Loss value when every row of `P` and `P'` equals `p_const`:
/// `beta H(p_const) + CE(q, p_const)`, the CE log floored.
pub fn collapse_value_certificate(prior: &Prior, beta: f64, p_const: &[f64]) -> Result<f64> {
    if p_const.len() != prior.c() {
        return Err(Error::Shape {
            op: "collapse_value_certificate",
            left: (1, p_const.len()),
            right: (1, prior.c()),
        });
    }
    let ce: f64 = prior
        .probs()
        .iter()
        .zip(p_const)
        .filter(|(&q, _)| q > 0.0)
        .map(|(&q, &p)| -q * p.max(LOG_FLOOR).ln())
        .sum();
    Ok(beta * entropy(p_const) + ce)
}
