//! The two-layer projector: embeddings `H` from representations `Z`, then
//! code-assignment probabilities `P = softmax(H W / tau)`.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{softmax_rows_value, Tape, Var};
use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const DEFAULT_EPSILON: f64 = 1e-8;
pub const DEFAULT_EPS_BN: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    L2Norm,
    Tanh,
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::L2Norm => "l2norm",
            Activation::Tanh => "tanh",
        })
    }
}

impl FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "l2norm" | "l2" => Ok(Activation::L2Norm),
            "tanh" => Ok(Activation::Tanh),
            other => Err(format!("unknown activation `{other}` (expected l2norm or tanh)")),
        }
    }
}

/// Softmax temperature `f / (sqrt(n) log((1 - eps (c-1)) / eps))`.
///
/// With this choice a perfectly aligned embedding puts exactly
/// `1 - eps (c-1)` on its code and `eps` on every other code.
pub fn temperature(f: usize, n: usize, c: usize, epsilon: f64) -> Result<f64> {
    if c < 2 {
        return Err(Error::param("c", format!("need at least 2 codes, got {c}")));
    }
    if n == 0 {
        return Err(Error::param("n", "batch size must be positive"));
    }
    if f == 0 {
        return Err(Error::param("f", "embedding size must be positive"));
    }
    if !(epsilon > 0.0 && epsilon < 1.0 / c as f64) {
        return Err(Error::param(
            "epsilon",
            format!("must lie in (0, 1/c) = (0, {}), got {epsilon}", 1.0 / c as f64),
        ));
    }
    let log_term = ((1.0 - epsilon * (c as f64 - 1.0)) / epsilon).ln();
    Ok(f as f64 / ((n as f64).sqrt() * log_term))
}

/// Trainable projector parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectorParams {
    pub linear_weight: Tensor,
    pub linear_bias: Tensor,
    pub bn_gamma: Tensor,
    pub bn_beta: Tensor,
    pub activation: Activation,
}

impl ProjectorParams {
    /// Uniform `+-sqrt(1/f)` weights, zero bias, unit gamma, zero beta.
    pub fn init(f: usize, activation: Activation, rng: &mut Rng) -> Self {
        let bound = (1.0 / f as f64).sqrt();
        ProjectorParams {
            linear_weight: Tensor::from_fn(f, f, |_, _| rng.random_range(-bound..bound)),
            linear_bias: Tensor::zeros(1, f),
            bn_gamma: Tensor::filled(1, f, 1.0),
            bn_beta: Tensor::zeros(1, f),
            activation,
        }
    }

    /// Identity linear map, unit gamma, zero shifts.
    pub fn identity(f: usize, activation: Activation) -> Self {
        ProjectorParams {
            linear_weight: Tensor::identity(f),
            linear_bias: Tensor::zeros(1, f),
            bn_gamma: Tensor::filled(1, f, 1.0),
            bn_beta: Tensor::zeros(1, f),
            activation,
        }
    }

    pub fn f(&self) -> usize {
        self.linear_weight.rows()
    }

    pub fn tensors(&self) -> [&Tensor; 4] {
        [
            &self.linear_weight,
            &self.linear_bias,
            &self.bn_gamma,
            &self.bn_beta,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 4] {
        [
            &mut self.linear_weight,
            &mut self.linear_bias,
            &mut self.bn_gamma,
            &mut self.bn_beta,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    /// Records the parameters on `tape` as trainable leaves.
    pub fn on_tape<'t>(&self, tape: &'t Tape) -> ProjectorVars<'t> {
        ProjectorVars {
            linear_weight: tape.param(self.linear_weight.clone()),
            linear_bias: tape.param(self.linear_bias.clone()),
            bn_gamma: tape.param(self.bn_gamma.clone()),
            bn_beta: tape.param(self.bn_beta.clone()),
            activation: self.activation,
        }
    }

    fn as_constants<'t>(&self, tape: &'t Tape) -> ProjectorVars<'t> {
        ProjectorVars {
            linear_weight: tape.constant(self.linear_weight.clone()),
            linear_bias: tape.constant(self.linear_bias.clone()),
            bn_gamma: tape.constant(self.bn_gamma.clone()),
            bn_beta: tape.constant(self.bn_beta.clone()),
            activation: self.activation,
        }
    }
}

/// Projector parameters recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct ProjectorVars<'t> {
    pub linear_weight: Var<'t>,
    pub linear_bias: Var<'t>,
    pub bn_gamma: Var<'t>,
    pub bn_beta: Var<'t>,
    pub activation: Activation,
}

impl<'t> ProjectorVars<'t> {
    pub fn vars(&self) -> [Var<'t>; 4] {
        [
            self.linear_weight,
            self.linear_bias,
            self.bn_gamma,
            self.bn_beta,
        ]
    }

    /// First layer. Under `L2Norm` rows get norm `sqrt(f/n)` for the actual
    /// batch size `n`; under `Tanh` no rescale is applied.
    pub fn embed(&self, z: Var<'t>) -> Result<Var<'t>> {
        let (n, f) = z.shape();
        let lin = z.matmul(self.linear_weight)?.add_row(self.linear_bias)?;
        let bn = lin.batchnorm(self.bn_gamma, self.bn_beta, DEFAULT_EPS_BN)?;
        Ok(match self.activation {
            Activation::L2Norm => bn.l2norm_rows((f as f64 / n as f64).sqrt()),
            Activation::Tanh => bn.tanh(),
        })
    }
}

/// Second layer on a tape: `softmax(H W / tau)` with `W` constant.
pub fn code_probabilities_on_tape<'t>(
    h: Var<'t>,
    codes: Var<'t>,
    tau: f64,
) -> Result<Var<'t>> {
    h.matmul(codes)?.softmax_rows(tau)
}

/// The `n x f` embedding matrix `H`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    pub values: Tensor,
}

impl EmbeddingMatrix {
    pub fn new(values: Tensor) -> Self {
        EmbeddingMatrix { values }
    }

    pub fn n(&self) -> usize {
        self.values.rows()
    }

    pub fn f(&self) -> usize {
        self.values.cols()
    }
}

/// An `n x c` row-stochastic assignment matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbMatrix {
    pub values: Tensor,
    pub clipped: bool,
}

impl ProbMatrix {
    /// Wraps `values` after checking that every row is a distribution.
    pub fn new(values: Tensor) -> Result<Self> {
        for (i, row) in values.iter_rows().enumerate() {
            let s: f64 = row.iter().sum();
            if row.iter().any(|&v| !(0.0..=1.0 + 1e-12).contains(&v)) || (s - 1.0).abs() > 1e-10 {
                return Err(Error::Data(format!("row {i} is not a probability vector")));
            }
        }
        Ok(ProbMatrix {
            values,
            clipped: false,
        })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        Self::new(Tensor::from_rows(rows)?)
    }

    pub fn n(&self) -> usize {
        self.values.rows()
    }

    pub fn c(&self) -> usize {
        self.values.cols()
    }

    pub fn argmax(&self) -> Vec<usize> {
        self.values.row_argmax()
    }

    /// Moves every row into the `[eps, 1 - eps (c-1)]` box while keeping its
    /// sum at one. Rows already inside the box are left untouched.
    pub fn clip(&self, epsilon: f64) -> Result<ProbMatrix> {
        let c = self.c();
        if !(epsilon >= 0.0 && epsilon * c as f64 <= 1.0) {
            return Err(Error::param("epsilon", format!("{epsilon} infeasible for c={c}")));
        }
        let lo = epsilon;
        let hi = 1.0 - epsilon * (c as f64 - 1.0);
        let mut out = self.values.clone();
        for i in 0..out.rows() {
            clip_row(out.row_mut(i), lo, hi);
        }
        Ok(ProbMatrix {
            values: out,
            clipped: true,
        })
    }
}

fn clip_row(row: &mut [f64], lo: f64, hi: f64) {
    let mut fixed = vec![false; row.len()];
    for _ in 0..=row.len() {
        let mut changed = false;
        for (v, fx) in row.iter_mut().zip(fixed.iter_mut()) {
            if !*fx && (*v < lo || *v > hi) {
                *v = v.clamp(lo, hi);
                *fx = true;
                changed = true;
            }
        }
        let fixed_mass: f64 = row.iter().zip(&fixed).filter(|(_, f)| **f).map(|(v, _)| v).sum();
        let free_mass: f64 = row.iter().zip(&fixed).filter(|(_, f)| !**f).map(|(v, _)| v).sum();
        let target = 1.0 - fixed_mass;
        if free_mass > 0.0 {
            let k = target / free_mass;
            if (k - 1.0).abs() > 0.0 {
                for (v, f) in row.iter_mut().zip(&fixed) {
                    if !*f {
                        *v *= k;
                    }
                }
                changed = true;
            }
        } else if target.abs() > 1e-15 {
            // Every entry pinned: spread the residual evenly over entries with room.
            let room: Vec<usize> = (0..row.len())
                .filter(|&j| if target > 0.0 { row[j] < hi } else { row[j] > lo })
                .collect();
            let share = target / room.len().max(1) as f64;
            for j in room {
                row[j] = (row[j] + share).clamp(lo, hi);
            }
        }
        if !changed {
            break;
        }
    }
}

/// Embeds `z` with `params` outside of any training tape.
pub fn embed(z: &Tensor, params: &ProjectorParams) -> Result<EmbeddingMatrix> {
    if z.cols() != params.f() {
        return Err(Error::Shape {
            op: "embed",
            left: z.shape(),
            right: params.linear_weight.shape(),
        });
    }
    let tape = Tape::new();
    let vars = params.as_constants(&tape);
    let h = vars.embed(tape.constant(z.clone()))?;
    let values = h.value().clone();
    Ok(EmbeddingMatrix { values })
}

/// `softmax(H W / tau)`, optionally clipped into the eps-box.
pub fn code_probabilities(
    h: &EmbeddingMatrix,
    dict: &Dictionary,
    tau: f64,
    epsilon: f64,
    clip: bool,
) -> Result<ProbMatrix> {
    if h.f() != dict.f() {
        return Err(Error::Shape {
            op: "code_probabilities",
            left: h.values.shape(),
            right: dict.codes().shape(),
        });
    }
    let logits = h.values.matmul(dict.codes())?;
    let p = ProbMatrix {
        values: softmax_rows_value(&logits, tau)?,
        clipped: false,
    };
    if clip {
        p.clip(epsilon)
    } else {
        Ok(p)
    }
}
