//! Desk-scale end-to-end training: MLP backbone, projector, frozen
//! dictionary, two augmented views per batch, Adam.

pub mod adam;
pub mod augment;
pub mod backbone;
pub mod checkpoint;
pub mod config;
pub mod probe;

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::Serialize;

use crate::autodiff::{Tape, Var};
use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::loss::{self, LossBreakdown, Prior};
use crate::projector::{
    self, code_probabilities_on_tape, temperature, EmbeddingMatrix, ProbMatrix, ProjectorParams,
    ProjectorVars,
};
use crate::rng;
use crate::tensor::Tensor;

pub use adam::{adam_update, AdamState};
pub use augment::{augment, AugmentConfig};
pub use backbone::{Backbone, BackboneVars};
pub use config::{PriorSpec, TrainConfig, TRAIN_KEYS};
pub use probe::linear_probe;

const TAG_INIT_BACKBONE: u64 = 0x1001;
const TAG_INIT_PROJECTOR: u64 = 0x1002;
const TAG_SHUFFLE: u64 = 0x1003;
const TAG_AUGMENT: u64 = 0x1004;

/// One training step as recorded in the metrics stream.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: u64,
    pub loss: LossBreakdown,
    /// Largest `|mean|` over the features of the representation `Z` (first view).
    pub z_max_abs_mean: f64,
    /// Largest standard deviation over the features of `Z` (first view).
    pub z_max_std: f64,
}

/// Per-epoch means of the step records.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EpochSummary {
    pub epoch: u64,
    pub steps: usize,
    pub invariance: f64,
    pub prior_matching: f64,
    pub total: f64,
    pub lower_bound: f64,
    pub z_max_abs_mean: f64,
    pub z_max_std: f64,
}

/// Summary statistics of one tensor, used in failure snapshots.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TensorStats {
    pub name: String,
    pub mean: f64,
    pub std: f64,
    pub max_abs: f64,
    pub finite: bool,
}

impl TensorStats {
    pub fn of(name: impl Into<String>, t: &Tensor) -> Self {
        let n = t.len().max(1) as f64;
        let mean = t.sum() / n;
        let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        TensorStats {
            name: name.into(),
            mean,
            std: var.sqrt(),
            max_abs: t.data().iter().fold(0.0, |m, v| m.max(v.abs())),
            finite: t.is_finite(),
        }
    }
}

fn column_stats(z: &Tensor) -> (f64, f64) {
    let means = z.column_means();
    let n = z.rows() as f64;
    let mut max_std: f64 = 0.0;
    for (j, m) in means.iter().enumerate() {
        let var = z.iter_rows().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n;
        max_std = max_std.max(var.sqrt());
    }
    (means.iter().fold(0.0, |a, m| a.max(m.abs())), max_std)
}

/// Forward graph of the composed loss for one pair of views.
pub struct StepGraph<'t> {
    pub loss: Var<'t>,
    pub breakdown: LossBreakdown,
    pub z: Var<'t>,
}

/// Builds backbone -> projector -> code probabilities -> loss for both
/// views on `tape`. The first view is the target side of the invariance term.
#[allow(clippy::too_many_arguments)]
pub fn composed_loss<'t>(
    tape: &'t Tape,
    backbone: &BackboneVars<'t>,
    proj: &ProjectorVars<'t>,
    dict: &Dictionary,
    view_a: &Tensor,
    view_b: &Tensor,
    cfg: &TrainConfig,
    prior: &Prior,
) -> Result<StepGraph<'t>> {
    let n = view_a.rows();
    let codes = tape.constant(dict.codes().clone());
    let tau = temperature(dict.f(), n, dict.c(), cfg.epsilon)?;
    let za = backbone.forward(tape.constant(view_a.clone()))?;
    let zb = backbone.forward(tape.constant(view_b.clone()))?;
    let pa = code_probabilities_on_tape(proj.embed(za)?, codes, tau)?;
    let pb = code_probabilities_on_tape(proj.embed(zb)?, codes, tau)?;
    let (loss, breakdown) =
        loss::total_loss_on_tape(pa, pb, prior, cfg.beta, cfg.epsilon, cfg.loss_variant)?;
    Ok(StepGraph {
        loss,
        breakdown,
        z: za,
    })
}

/// Model, optimizer state and counters of one training run.
#[derive(Clone, Debug, PartialEq)]
pub struct Trainer {
    pub config: TrainConfig,
    pub backbone: Backbone,
    pub projector: ProjectorParams,
    pub dictionary: Dictionary,
    pub adam: AdamState,
    pub step: u64,
    pub epoch: u64,
    prior: Prior,
}

impl Trainer {
    /// Seeded initialization from `config.seed`. The dictionary must have
    /// `f` matching the config and stays frozen.
    pub fn new(config: TrainConfig, input_dim: usize, dictionary: Dictionary) -> Result<Self> {
        config.validate()?;
        if dictionary.f() != config.f || dictionary.c() != config.c {
            return Err(Error::param(
                "dictionary",
                format!(
                    "is {}x{}, config expects f={} c={}",
                    dictionary.f(),
                    dictionary.c(),
                    config.f,
                    config.c
                ),
            ));
        }
        let backbone = Backbone::init(
            &config.widths(input_dim),
            &mut rng::stream(config.seed, TAG_INIT_BACKBONE),
        )?;
        let projector = ProjectorParams::init(
            config.f,
            config.activation,
            &mut rng::stream(config.seed, TAG_INIT_PROJECTOR),
        );
        let prior = config.prior.build(config.c)?;
        let mut t = Trainer {
            adam: AdamState::new(std::iter::empty()),
            config,
            backbone,
            projector,
            dictionary,
            step: 0,
            epoch: 0,
            prior,
        };
        t.adam = AdamState::new(t.parameters());
        Ok(t)
    }

    pub(crate) fn from_parts(
        config: TrainConfig,
        backbone: Backbone,
        projector: ProjectorParams,
        dictionary: Dictionary,
        adam: AdamState,
        step: u64,
        epoch: u64,
    ) -> Result<Self> {
        let prior = config.prior.build(config.c)?;
        Ok(Trainer {
            config,
            backbone,
            projector,
            dictionary,
            adam,
            step,
            epoch,
            prior,
        })
    }

    pub fn prior(&self) -> &Prior {
        &self.prior
    }

    pub fn input_dim(&self) -> usize {
        self.backbone.input_dim()
    }

    /// Trainable tensors: backbone layers, then projector.
    pub fn parameters(&self) -> Vec<&Tensor> {
        let mut out = self.backbone.tensors();
        out.extend(self.projector.tensors());
        out
    }

    pub fn parameter_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for l in 0..self.backbone.weights.len() {
            out.push(format!("backbone.weight{l}"));
            out.push(format!("backbone.bias{l}"));
        }
        for n in ["linear_weight", "linear_bias", "bn_gamma", "bn_beta"] {
            out.push(format!("projector.{n}"));
        }
        out
    }

    pub fn parameter_stats(&self) -> Vec<TensorStats> {
        self.parameter_names()
            .into_iter()
            .zip(self.parameters())
            .map(|(n, t)| TensorStats::of(n, t))
            .collect()
    }

    fn snapshot(&self, what: &str, extra: &[TensorStats]) -> Error {
        let mut msg = format!("{what} at step {}; parameter statistics:", self.step);
        for s in self.parameter_stats().iter().chain(extra) {
            let _ = write!(
                msg,
                "\n  {}: mean={:.4e} std={:.4e} max_abs={:.4e} finite={}",
                s.name, s.mean, s.std, s.max_abs, s.finite
            );
        }
        Error::NonFinite(msg)
    }

    /// Loss of the current model on a fixed pair of views, without updating.
    pub fn loss_on_views(&self, a: &Tensor, b: &Tensor) -> Result<LossBreakdown> {
        let tape = Tape::new();
        let bb = self.backbone.on_tape(&tape);
        let pj = self.projector.on_tape(&tape);
        let g = composed_loss(&tape, &bb, &pj, &self.dictionary, a, b, &self.config, &self.prior)?;
        Ok(g.breakdown)
    }

    /// Backward pass and Adam update on a fixed pair of views.
    pub fn step_on_views(&mut self, a: &Tensor, b: &Tensor) -> Result<StepRecord> {
        let tape = Tape::new();
        let bb = self.backbone.on_tape(&tape);
        let pj = self.projector.on_tape(&tape);
        let g = composed_loss(&tape, &bb, &pj, &self.dictionary, a, b, &self.config, &self.prior)?;
        let (z_max_abs_mean, z_max_std) = column_stats(&g.z.value());
        if !g.loss.item().is_finite() {
            let z = TensorStats::of("activation.z", &g.z.value());
            return Err(self.snapshot("non-finite loss", &[z]));
        }
        let grads = tape.backward(g.loss)?;
        let mut vars = bb.vars();
        vars.extend(pj.vars());
        let grad_list: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(v)).collect();
        drop(grads);
        if let Some(k) = grad_list.iter().position(|g| !g.is_finite()) {
            let name = self.parameter_names()[k].clone();
            return Err(self.snapshot(&format!("non-finite gradient for {name}"), &[]));
        }
        let lr = self.config.lr;
        let mut params = self.backbone.tensors_mut();
        params.extend(self.projector.tensors_mut());
        self.adam.step(&mut params, &grad_list, lr)?;
        self.step += 1;
        Ok(StepRecord {
            step: self.step,
            loss: g.breakdown,
            z_max_abs_mean,
            z_max_std,
        })
    }

    /// Seed of the augmentation draw for the next step.
    pub fn augment_seed(&self) -> u64 {
        rng::mix(rng::mix(self.config.seed, TAG_AUGMENT), self.step)
    }

    /// Augments `x` into two views and takes one optimization step.
    pub fn train_step(&mut self, x: &Tensor) -> Result<StepRecord> {
        if x.cols() != self.input_dim() {
            return Err(Error::Shape {
                op: "train_step",
                left: x.shape(),
                right: (self.config.batch, self.input_dim()),
            });
        }
        let (a, b) = augment(x, &self.config.augment, self.augment_seed())?;
        self.step_on_views(&a, &b)
    }

    /// One pass over `data` in seeded random order. The last partial batch
    /// is dropped.
    pub fn train_epoch(
        &mut self,
        data: &Tensor,
        mut on_step: impl FnMut(&StepRecord),
    ) -> Result<EpochSummary> {
        let n = self.config.batch;
        if data.rows() < n {
            return Err(Error::DegenerateBatch(format!(
                "{} samples cannot fill one batch of {n}",
                data.rows()
            )));
        }
        let mut order: Vec<usize> = (0..data.rows()).collect();
        order.shuffle(&mut rng::stream(
            rng::mix(self.config.seed, TAG_SHUFFLE),
            self.epoch,
        ));
        let mut sums = [0.0; 4];
        let (mut zm, mut zs) = (0.0f64, 0.0f64);
        let mut steps = 0;
        for chunk in order.chunks_exact(n) {
            let rec = self.train_step(&data.select_rows(chunk))?;
            on_step(&rec);
            sums[0] += rec.loss.invariance;
            sums[1] += rec.loss.prior_matching;
            sums[2] += rec.loss.total;
            sums[3] += rec.loss.lower_bound;
            zm = zm.max(rec.z_max_abs_mean);
            zs = zs.max(rec.z_max_std);
            steps += 1;
        }
        self.epoch += 1;
        let k = steps as f64;
        Ok(EpochSummary {
            epoch: self.epoch,
            steps,
            invariance: sums[0] / k,
            prior_matching: sums[1] / k,
            total: sums[2] / k,
            lower_bound: sums[3] / k,
            z_max_abs_mean: zm,
            z_max_std: zs,
        })
    }

    /// Backbone representations `Z`.
    pub fn represent(&self, x: &Tensor) -> Result<Tensor> {
        self.backbone.forward(x)
    }

    /// Embeddings `H` with batch statistics and scale taken over all of `x`.
    pub fn embed(&self, x: &Tensor) -> Result<EmbeddingMatrix> {
        projector::embed(&self.represent(x)?, &self.projector)
    }

    /// Code probabilities with the temperature for `x.rows()` samples.
    pub fn probabilities(&self, x: &Tensor) -> Result<ProbMatrix> {
        let h = self.embed(x)?;
        self.probabilities_of(&h)
    }

    pub fn probabilities_of(&self, h: &EmbeddingMatrix) -> Result<ProbMatrix> {
        let tau = temperature(self.config.f, h.n(), self.config.c, self.config.epsilon)?;
        projector::code_probabilities(h, &self.dictionary, tau, self.config.epsilon, false)
    }

    /// Argmax code of every row of `x`.
    pub fn assign(&self, x: &Tensor) -> Result<Vec<usize>> {
        Ok(self.probabilities(x)?.argmax())
    }
}
