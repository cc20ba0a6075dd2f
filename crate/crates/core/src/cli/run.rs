//! Run configuration and the `train` pipeline.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::cli::data::{gaussian_clusters, ClusterSpec, Dataset};
use crate::config::{format_kv, format_list, parse_kv, parse_list, KvEntry};
use crate::diagnostics::{self, CollapseReport, DiagnosticsConfig};
use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::oracle::{self, Lemma1Report};
use crate::rng;
use crate::tensor::Tensor;
use crate::trainer::probe::{linear_probe, PROBE_EPOCHS, PROBE_LR};
use crate::trainer::{augment, checkpoint, EpochSummary, Trainer, TrainConfig, TRAIN_KEYS};

pub const METRICS_FILE: &str = "metrics.csv";
pub const REPORT_FILE: &str = "report.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const METRICS_HEADER: &str = "step,invariance,prior_matching,total,lower_bound";

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Synthetic(ClusterSpec),
    Csv(PathBuf),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DictionaryChoice {
    Rademacher,
    Hadamard,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub data: DataSource,
    pub data_seed: u64,
    pub dictionary_seed: u64,
    pub dictionary: DictionaryChoice,
    pub output_dir: PathBuf,
    /// Fraction of the dataset held out for evaluation.
    pub holdout: f64,
    pub diagnostics: bool,
    pub probe: bool,
    pub gmm_grid: Vec<usize>,
    pub mc_samples: usize,
    pub probe_epochs: usize,
    pub probe_lr: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            data: DataSource::Synthetic(ClusterSpec::default()),
            data_seed: 0,
            dictionary_seed: 0,
            dictionary: DictionaryChoice::Rademacher,
            output_dir: PathBuf::from("out"),
            holdout: 0.2,
            diagnostics: true,
            probe: true,
            gmm_grid: vec![10, 20, 50],
            mc_samples: 2000,
            probe_epochs: PROBE_EPOCHS,
            probe_lr: PROBE_LR,
        }
    }
}

fn parse_bool(e: &KvEntry) -> Result<bool> {
    match e.value.as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        v => Err(e.error(format!("expected a boolean, got `{v}`"))),
    }
}

impl RunConfig {
    fn synthetic(&mut self) -> &mut ClusterSpec {
        if !matches!(self.data, DataSource::Synthetic(_)) {
            self.data = DataSource::Synthetic(ClusterSpec::default());
        }
        match &mut self.data {
            DataSource::Synthetic(s) => s,
            DataSource::Csv(_) => unreachable!(),
        }
    }

    /// Applies one entry; unknown keys are an error naming the key.
    pub fn set(&mut self, e: &KvEntry) -> Result<()> {
        if self.train.set(e)? {
            return Ok(());
        }
        match e.key.as_str() {
            "data" => {
                self.data = if e.value == "synthetic" {
                    DataSource::Synthetic(ClusterSpec::default())
                } else {
                    DataSource::Csv(PathBuf::from(&e.value))
                }
            }
            "clusters" => self.synthetic().clusters = e.parse()?,
            "dim" => self.synthetic().dim = e.parse()?,
            "per_cluster" => self.synthetic().per_cluster = e.parse()?,
            "spread" => self.synthetic().spread = e.parse()?,
            "data_seed" => self.data_seed = e.parse()?,
            "dictionary_seed" => self.dictionary_seed = e.parse()?,
            "dictionary" => {
                self.dictionary = match e.value.as_str() {
                    "rademacher" => DictionaryChoice::Rademacher,
                    "hadamard" => DictionaryChoice::Hadamard,
                    v => return Err(e.error(format!("expected rademacher or hadamard, got `{v}`"))),
                }
            }
            "output_dir" => self.output_dir = PathBuf::from(&e.value),
            "holdout" => self.holdout = e.parse()?,
            "diagnostics" => self.diagnostics = parse_bool(e)?,
            "probe" => self.probe = parse_bool(e)?,
            "gmm_grid" => self.gmm_grid = parse_list(e)?,
            "mc_samples" => self.mc_samples = e.parse()?,
            "probe_epochs" => self.probe_epochs = e.parse()?,
            "probe_lr" => self.probe_lr = e.parse()?,
            _ => {
                return Err(e.error(format!(
                    "unknown key (known: {}, {})",
                    TRAIN_KEYS.join(", "),
                    RUN_KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let mut out = self.train.to_pairs();
        match &self.data {
            DataSource::Synthetic(s) => {
                out.push(("data", "synthetic".into()));
                out.push(("clusters", s.clusters.to_string()));
                out.push(("dim", s.dim.to_string()));
                out.push(("per_cluster", s.per_cluster.to_string()));
                out.push(("spread", s.spread.to_string()));
            }
            DataSource::Csv(p) => out.push(("data", p.display().to_string())),
        }
        out.extend([
            ("data_seed", self.data_seed.to_string()),
            ("dictionary_seed", self.dictionary_seed.to_string()),
            (
                "dictionary",
                match self.dictionary {
                    DictionaryChoice::Rademacher => "rademacher",
                    DictionaryChoice::Hadamard => "hadamard",
                }
                .to_string(),
            ),
            ("output_dir", self.output_dir.display().to_string()),
            ("holdout", self.holdout.to_string()),
            ("diagnostics", self.diagnostics.to_string()),
            ("probe", self.probe.to_string()),
            ("gmm_grid", format_list(&self.gmm_grid)),
            ("mc_samples", self.mc_samples.to_string()),
            ("probe_epochs", self.probe_epochs.to_string()),
            ("probe_lr", self.probe_lr.to_string()),
        ]);
        out
    }

    pub fn to_text(&self) -> String {
        format_kv(&self.to_pairs())
    }

    /// Parses a config file body, then applies `overrides` in order.
    pub fn from_sources(text: &str, source: &str, overrides: &[KvEntry]) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for e in parse_kv(text, source)?.iter().chain(overrides) {
            cfg.set(e)?;
        }
        Ok(cfg)
    }

    /// All violated constraints at once.
    pub fn validate(&self) -> Result<()> {
        let mut problems = self.train.problems();
        if !(0.0..1.0).contains(&self.holdout) {
            problems.push(format!("holdout must lie in [0, 1), got {}", self.holdout));
        }
        if let DataSource::Synthetic(s) = &self.data {
            if s.clusters == 0 || s.dim == 0 || s.per_cluster == 0 {
                problems.push("clusters, dim and per_cluster must be >= 1".into());
            }
            if !(s.spread >= 0.0) {
                problems.push(format!("spread must be >= 0, got {}", s.spread));
            }
        }
        if self.dictionary == DictionaryChoice::Hadamard && self.train.f != self.train.c {
            problems.push("hadamard dictionary needs c = f".into());
        }
        if self.mc_samples == 0 {
            problems.push("mc_samples must be >= 1".into());
        }
        if !(self.probe_lr > 0.0) {
            problems.push(format!("probe_lr must be > 0, got {}", self.probe_lr));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config {
                location: "run config".into(),
                reason: problems.join("; "),
            })
        }
    }

    pub fn build_dictionary(&self) -> Result<Dictionary> {
        match self.dictionary {
            DictionaryChoice::Rademacher => {
                Dictionary::sample(self.train.f, self.train.c, self.dictionary_seed)
            }
            DictionaryChoice::Hadamard => Dictionary::hadamard(self.train.f),
        }
    }

    pub fn load_data(&self) -> Result<Dataset> {
        match &self.data {
            DataSource::Synthetic(spec) => gaussian_clusters(spec, self.data_seed),
            DataSource::Csv(p) => Dataset::load(p),
        }
    }
}

/// Run keys beyond the training keys.
pub const RUN_KEYS: &[&str] = &[
    "data",
    "clusters",
    "dim",
    "per_cluster",
    "spread",
    "data_seed",
    "dictionary_seed",
    "dictionary",
    "output_dir",
    "holdout",
    "diagnostics",
    "probe",
    "gmm_grid",
    "mc_samples",
    "probe_epochs",
    "probe_lr",
];

#[derive(Clone, Debug, Serialize)]
pub struct Seeds {
    pub dictionary: u64,
    pub data: u64,
    pub train: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub config: BTreeMap<String, String>,
    pub seeds: Seeds,
    pub dictionary: String,
    pub parameter_count: usize,
    pub train_samples: usize,
    pub eval_samples: usize,
    pub epochs: Vec<EpochSummary>,
    pub max_feature_abs_mean: f64,
    pub max_feature_std: f64,
    pub lemma1: Lemma1Report,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub collapse: Option<CollapseReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nmi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probe_accuracy: Option<f64>,
    pub wall_clock_seconds: f64,
}

/// Fails on the first non-finite number, naming its JSON path.
fn ensure_finite(v: &serde_json::Value, path: &str) -> Result<()> {
    match v {
        serde_json::Value::Null => Err(Error::NonFinite(format!("report field {path}"))),
        serde_json::Value::Array(a) => a
            .iter()
            .enumerate()
            .try_for_each(|(i, x)| ensure_finite(x, &format!("{path}[{i}]"))),
        serde_json::Value::Object(o) => o
            .iter()
            .try_for_each(|(k, x)| ensure_finite(x, &format!("{path}.{k}"))),
        _ => Ok(()),
    }
}

/// Writes the metrics stream header plus one row per step.
pub fn metrics_row(out: &mut String, step: u64, l: &crate::loss::LossBreakdown) {
    let _ = writeln!(
        out,
        "{step},{},{},{},{}",
        l.invariance, l.prior_matching, l.total, l.lower_bound
    );
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Splits with a seeded permutation; the first `holdout` share is evaluation.
fn split(ds: &Dataset, holdout: f64, seed: u64) -> (Dataset, Dataset) {
    use rand::seq::SliceRandom;
    if holdout == 0.0 {
        return (ds.clone(), ds.clone());
    }
    let mut idx: Vec<usize> = (0..ds.len()).collect();
    idx.shuffle(&mut rng::stream(seed, 0x5E));
    let k = ((ds.len() as f64 * holdout).round() as usize).clamp(1, ds.len() - 1);
    (ds.subset(&idx[k..]), ds.subset(&idx[..k]))
}

/// Trains per `cfg`, evaluates, and writes `metrics.csv`, `checkpoint.bin`
/// and `report.json` into `cfg.output_dir`.
pub fn run_train(cfg: &RunConfig) -> Result<RunReport> {
    cfg.validate()?;
    let started = Instant::now();
    let data = cfg.load_data()?;
    if data.len() < 2 {
        return Err(Error::Data("dataset needs at least 2 rows".into()));
    }
    let (train_set, eval_set) = split(&data, cfg.holdout, cfg.data_seed);
    let dict = cfg.build_dictionary()?;
    let mut trainer = Trainer::new(cfg.train.clone(), data.dim(), dict.clone())?;
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;

    let mut metrics = format!("{METRICS_HEADER}\n");
    let mut epochs = Vec::with_capacity(cfg.train.epochs);
    let metrics_path = cfg.output_dir.join(METRICS_FILE);
    for _ in 0..cfg.train.epochs {
        let res = trainer.train_epoch(&train_set.features, |rec| {
            metrics_row(&mut metrics, rec.step, &rec.loss)
        });
        match res {
            Ok(s) => epochs.push(s),
            Err(e) => {
                // keep what was recorded up to the failure
                write(&metrics_path, metrics.as_bytes())?;
                return Err(e);
            }
        }
    }
    write(&metrics_path, metrics.as_bytes())?;
    checkpoint::save(&trainer, &cfg.output_dir.join(CHECKPOINT_FILE))?;
    if trainer.dictionary != dict {
        return Err(Error::Construction("dictionary changed during training".into()));
    }

    let lemma1 = held_out_lemma1(&trainer, &eval_set.features)?;
    let eval_x = &eval_set.features;
    let (labeled_rows, labels) = eval_set.labeled();
    let nmi = if labeled_rows.is_empty() {
        None
    } else {
        let codes = trainer.assign(eval_x)?;
        let picked: Vec<usize> = labeled_rows.iter().map(|&i| codes[i]).collect();
        Some(diagnostics::nmi(&picked, &labels)?)
    };
    let collapse = if cfg.diagnostics {
        let z = trainer.represent(eval_x)?;
        let h = trainer.embed(eval_x)?;
        let p = trainer.probabilities_of(&h)?;
        let dcfg = DiagnosticsConfig {
            component_grid: cfg.gmm_grid.clone(),
            mc_samples: cfg.mc_samples,
            seed: cfg.train.seed,
            ..DiagnosticsConfig::default()
        };
        Some(diagnostics::collapse_report(&h, &p, &z, &dict, &dcfg)?)
    } else {
        None
    };
    let (all_rows, all_labels) = data.labeled();
    let classes = all_labels.iter().max().map_or(0, |m| m + 1);
    let probe_accuracy = if cfg.probe && classes >= 2 && all_rows.len() >= classes {
        let z = trainer.represent(&data.features.select_rows(&all_rows))?;
        Some(linear_probe(&z, &all_labels, classes, cfg.probe_epochs, cfg.probe_lr, cfg.train.seed)?)
    } else {
        None
    };

    let report = RunReport {
        config: cfg.to_pairs().into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        seeds: Seeds {
            dictionary: cfg.dictionary_seed,
            data: cfg.data_seed,
            train: cfg.train.seed,
        },
        dictionary: dict.descriptor(),
        parameter_count: trainer.backbone.param_count()
            + trainer.projector.tensors().iter().map(|t| t.len()).sum::<usize>(),
        train_samples: train_set.len(),
        eval_samples: eval_set.len(),
        max_feature_abs_mean: epochs.iter().fold(0.0, |m, e| m.max(e.z_max_abs_mean)),
        max_feature_std: epochs.iter().fold(0.0, |m, e| m.max(e.z_max_std)),
        epochs,
        lemma1,
        collapse,
        nmi,
        probe_accuracy,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    let json = serde_json::to_value(&report).map_err(|e| Error::Format(e.to_string()))?;
    ensure_finite(&json, "report")?;
    let text = serde_json::to_string_pretty(&json).map_err(|e| Error::Format(e.to_string()))?;
    write(&cfg.output_dir.join(REPORT_FILE), text.as_bytes())?;
    Ok(report)
}

/// Optimality residuals of the trained model on one held-out batch and two
/// of its augmented views.
pub fn held_out_lemma1(trainer: &Trainer, eval_x: &Tensor) -> Result<Lemma1Report> {
    let n = trainer.config.batch.min(eval_x.rows());
    if n < 2 {
        return Err(Error::DegenerateBatch("held-out set has fewer than 2 rows".into()));
    }
    let rows: Vec<usize> = (0..n).collect();
    let batch = eval_x.select_rows(&rows);
    let (a, b) = augment(&batch, &trainer.config.augment, rng::mix(trainer.config.seed, 0xE7A1))?;
    let pa = trainer.probabilities(&a)?;
    let pb = trainer.probabilities(&b)?;
    oracle::check_lemma1(
        &pa,
        &pb,
        trainer.prior(),
        trainer.config.epsilon,
        trainer.config.beta,
        trainer.config.loss_variant,
    )
}
