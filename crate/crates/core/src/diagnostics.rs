//! Collapse detectors and downstream-quality metrics.
//!
//! - dimensional: [`singular_spectrum`] of the embedding covariance and
//!   [`representation_rank`]
//! - intracluster: [`gmm_entropy`], a Monte Carlo entropy estimate of a
//!   diagonal Gaussian mixture fitted by EM
//! - cluster: histogram of argmax codes
//! - representation: variance of predictions across rows
//!
//! [`nmi`] scores code assignments against labels.

use std::collections::{BTreeMap, HashMap};

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::oracle;
use crate::projector::{EmbeddingMatrix, ProbMatrix};
use crate::rng;
use crate::tensor::Tensor;

pub const RANK_TOL: f64 = 1e-6;
pub const VARIANCE_FLOOR: f64 = 1e-6;
pub const EM_MAX_ITERS: usize = 200;
pub const MC_SAMPLES: usize = 10_000;
pub const COMPONENT_GRID: [usize; 7] = [10, 20, 50, 100, 200, 500, 1000];

fn to_dmatrix(t: &Tensor) -> DMatrix<f64> {
    DMatrix::from_row_slice(t.rows(), t.cols(), t.data())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Centering {
    Centered,
    Uncentered,
}

/// `(1/n) H^T H` with or without column centering.
pub fn covariance(h: &Tensor, centering: Centering) -> Tensor {
    let n = h.rows().max(1) as f64;
    let means = match centering {
        Centering::Centered => h.column_means(),
        Centering::Uncentered => vec![0.0; h.cols()],
    };
    let f = h.cols();
    let mut cov = Tensor::zeros(f, f);
    for row in h.iter_rows() {
        for a in 0..f {
            let da = row[a] - means[a];
            for b in a..f {
                let v = cov.get(a, b) + da * (row[b] - means[b]);
                cov.set(a, b, v);
            }
        }
    }
    for a in 0..f {
        for b in a..f {
            let v = cov.get(a, b) / n;
            cov.set(a, b, v);
            cov.set(b, a, v);
        }
    }
    cov
}

/// Singular values of the centered covariance, descending.
pub fn singular_spectrum(h: &EmbeddingMatrix) -> Vec<f64> {
    singular_spectrum_with(h, Centering::Centered)
}

pub fn singular_spectrum_with(h: &EmbeddingMatrix, centering: Centering) -> Vec<f64> {
    let cov = to_dmatrix(&covariance(&h.values, centering));
    let mut s: Vec<f64> = cov.svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Number of singular values of `z` above `tol_ratio` times the largest.
pub fn representation_rank(z: &Tensor, tol_ratio: f64) -> usize {
    if z.is_empty() {
        return 0;
    }
    let s = to_dmatrix(z).svd(false, false).singular_values;
    let max = s.iter().fold(0.0f64, |m, &v| m.max(v));
    if max == 0.0 {
        return 0;
    }
    s.iter().filter(|&&v| v > tol_ratio * max).count()
}

/// Normalized mutual information with geometric-mean normalization.
///
/// Two constant labelings score 1; exactly one constant labeling scores 0.
pub fn nmi(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            op: "nmi",
            left: (a.len(), 1),
            right: (b.len(), 1),
        });
    }
    if a.is_empty() {
        return Err(Error::Data("nmi of empty labelings".into()));
    }
    let m = a.len() as f64;
    let mut joint: HashMap<(usize, usize), usize> = HashMap::new();
    let mut ma: HashMap<usize, usize> = HashMap::new();
    let mut mb: HashMap<usize, usize> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1;
        *ma.entry(x).or_default() += 1;
        *mb.entry(y).or_default() += 1;
    }
    let ent = |h: &HashMap<usize, usize>| -> f64 {
        h.values()
            .map(|&k| {
                let p = k as f64 / m;
                -p * p.ln()
            })
            .sum()
    };
    let (ha, hb) = (ent(&ma), ent(&mb));
    if ma.len() == 1 && mb.len() == 1 {
        return Ok(1.0);
    }
    if ha <= 0.0 || hb <= 0.0 {
        return Ok(0.0);
    }
    let mi: f64 = joint
        .iter()
        .map(|(&(x, y), &k)| {
            let pxy = k as f64 / m;
            let px = ma[&x] as f64 / m;
            let py = mb[&y] as f64 / m;
            pxy * (pxy / (px * py)).ln()
        })
        .sum();
    Ok((mi / (ha * hb).sqrt()).clamp(0.0, 1.0))
}

/// Fitted diagonal-covariance mixture.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagonalGmm {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
}

impl DiagonalGmm {
    fn log_component(&self, k: usize, x: &[f64]) -> f64 {
        let mut s = self.weights[k].ln();
        for ((xv, mu), var) in x.iter().zip(&self.means[k]).zip(&self.variances[k]) {
            s -= 0.5 * ((2.0 * std::f64::consts::PI * var).ln() + (xv - mu).powi(2) / var);
        }
        s
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let logs: Vec<f64> = (0..self.weights.len()).map(|k| self.log_component(k, x)).collect();
        log_sum_exp(&logs)
    }

    pub fn sample(&self, rng: &mut rng::Rng) -> Vec<f64> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = self.weights.len() - 1;
        for (j, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = j;
                break;
            }
        }
        self.means[k]
            .iter()
            .zip(&self.variances[k])
            .map(|(mu, var)| {
                let z: f64 = StandardNormal.sample(rng);
                mu + var.sqrt() * z
            })
            .collect()
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GmmEntropy {
    pub entropy: f64,
    pub components: usize,
    pub converged: bool,
    /// Some fitted variance sits at the floor.
    pub floor_active: bool,
    pub mean_log_likelihood: f64,
    pub iterations: usize,
}

fn kmeans_pp(x: &Tensor, k: usize, rng: &mut rng::Rng) -> Vec<Vec<f64>> {
    let m = x.rows();
    let mut centers = vec![x.row(rng.random_range(0..m)).to_vec()];
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum::<f64>();
    let mut d2: Vec<f64> = (0..m).map(|i| dist(x.row(i), &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = m - 1;
            for (i, &d) in d2.iter().enumerate() {
                if u < d {
                    idx = i;
                    break;
                }
                u -= d;
            }
            idx
        } else {
            rng.random_range(0..m)
        };
        let c = x.row(pick).to_vec();
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(dist(x.row(i), &c));
        }
        centers.push(c);
    }
    centers
}

/// EM fit with k-means++ initialization and a variance floor.
/// Returns the fit, whether it converged, final mean log-likelihood and
/// iteration count. Non-convergence returns the best-likelihood iterate.
pub fn fit_gmm(
    x: &Tensor,
    components: usize,
    seed: u64,
) -> Result<(DiagonalGmm, bool, f64, usize)> {
    let (m, d) = x.shape();
    if components == 0 || m < components {
        return Err(Error::Data(format!(
            "gmm needs 1 <= components <= samples, got {components} for {m} samples"
        )));
    }
    let mut r = rng::stream(seed, 0x6A);
    let global = x.column_means();
    let global_var: Vec<f64> = (0..d)
        .map(|j| {
            let v = x.iter_rows().map(|row| (row[j] - global[j]).powi(2)).sum::<f64>() / m as f64;
            v.max(VARIANCE_FLOOR)
        })
        .collect();
    let mut gmm = DiagonalGmm {
        weights: vec![1.0 / components as f64; components],
        means: kmeans_pp(x, components, &mut r),
        variances: vec![global_var; components],
    };
    let mut best = (gmm.clone(), f64::NEG_INFINITY);
    let mut prev = f64::NEG_INFINITY;
    let mut resp = vec![0.0; m * components];
    for it in 1..=EM_MAX_ITERS {
        // E step
        let mut ll = 0.0;
        let mut logs = vec![0.0; components];
        for i in 0..m {
            for (k, l) in logs.iter_mut().enumerate() {
                *l = gmm.log_component(k, x.row(i));
            }
            let lse = log_sum_exp(&logs);
            ll += lse;
            for k in 0..components {
                resp[i * components + k] = (logs[k] - lse).exp();
            }
        }
        let mean_ll = ll / m as f64;
        if mean_ll > best.1 {
            best = (gmm.clone(), mean_ll);
        }
        if (mean_ll - prev).abs() < 1e-8 * (1.0 + mean_ll.abs()) {
            return Ok((gmm, true, mean_ll, it));
        }
        prev = mean_ll;
        // M step
        for k in 0..components {
            let nk: f64 = (0..m).map(|i| resp[i * components + k]).sum();
            if nk < 1e-12 {
                // dead component: reseed at a random sample
                gmm.means[k] = x.row(r.random_range(0..m)).to_vec();
                gmm.weights[k] = 1e-12;
                continue;
            }
            gmm.weights[k] = nk / m as f64;
            for j in 0..d {
                let mu = (0..m).map(|i| resp[i * components + k] * x.get(i, j)).sum::<f64>() / nk;
                let var = (0..m)
                    .map(|i| resp[i * components + k] * (x.get(i, j) - mu).powi(2))
                    .sum::<f64>()
                    / nk;
                gmm.means[k][j] = mu;
                gmm.variances[k][j] = var.max(VARIANCE_FLOOR);
            }
        }
        let s: f64 = gmm.weights.iter().sum();
        gmm.weights.iter_mut().for_each(|w| *w /= s);
    }
    Ok((best.0, false, best.1, EM_MAX_ITERS))
}

/// `-(1/S) sum log p(x_s)` over `S = mc_samples` draws from the mixture
/// fitted to `z`.
pub fn gmm_entropy(z: &Tensor, components: usize, mc_samples: usize, seed: u64) -> Result<GmmEntropy> {
    if mc_samples == 0 {
        return Err(Error::param("mc_samples", "must be >= 1"));
    }
    let (gmm, converged, mean_log_likelihood, iterations) = fit_gmm(z, components, seed)?;
    let mut r = rng::stream(seed, 0x6B);
    let total: f64 = (0..mc_samples)
        .map(|_| gmm.log_density(&gmm.sample(&mut r)))
        .sum();
    let floor_active = gmm
        .variances
        .iter()
        .flatten()
        .any(|&v| v <= VARIANCE_FLOOR * (1.0 + 1e-9));
    Ok(GmmEntropy {
        entropy: -total / mc_samples as f64,
        components,
        converged,
        floor_active,
        mean_log_likelihood,
        iterations,
    })
}

/// Entropy estimate for every grid entry not exceeding the sample count.
/// Each component count uses its own derived seed.
pub fn gmm_entropy_grid(
    z: &Tensor,
    grid: &[usize],
    mc_samples: usize,
    seed: u64,
) -> Result<BTreeMap<usize, f64>> {
    let mut out = BTreeMap::new();
    for &k in grid.iter().filter(|&&k| k >= 1 && k <= z.rows()) {
        out.insert(k, gmm_entropy(z, k, mc_samples, rng::mix(seed, k as u64))?.entropy);
    }
    Ok(out)
}

/// Mean over codes of the across-row variance of `p_.j`.
pub fn prediction_variance(p: &ProbMatrix) -> f64 {
    let (n, c) = (p.n() as f64, p.c());
    let means = p.values.column_means();
    let total: f64 = (0..c)
        .map(|j| p.values.iter_rows().map(|r| (r[j] - means[j]).powi(2)).sum::<f64>() / n)
        .sum();
    total / c as f64
}

pub fn code_histogram(p: &ProbMatrix) -> Vec<usize> {
    let mut h = vec![0; p.c()];
    for j in p.argmax() {
        h[j] += 1;
    }
    h
}

#[derive(Clone, Debug)]
pub struct DiagnosticsConfig {
    pub component_grid: Vec<usize>,
    pub mc_samples: usize,
    pub seed: u64,
    pub rank_tol: f64,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            component_grid: vec![10, 20, 50],
            mc_samples: MC_SAMPLES,
            seed: 0,
            rank_tol: RANK_TOL,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CollapseReport {
    pub singular_values: Vec<f64>,
    /// Intracluster probe on the embeddings `H`.
    pub gmm_entropies: BTreeMap<usize, f64>,
    /// Intracluster probe on the backbone representations `Z`.
    pub gmm_entropies_representation: BTreeMap<usize, f64>,
    pub code_histogram: Vec<usize>,
    pub empty_codes: usize,
    pub prediction_variance: f64,
    pub covariance_residual: f64,
    pub adjacency_block_residual: f64,
    pub representation_rank: usize,
}

pub fn collapse_report(
    h: &EmbeddingMatrix,
    p: &ProbMatrix,
    z: &Tensor,
    dict: &Dictionary,
    cfg: &DiagnosticsConfig,
) -> Result<CollapseReport> {
    if h.n() != p.n() || h.n() != z.rows() {
        return Err(Error::Shape {
            op: "collapse_report",
            left: h.values.shape(),
            right: p.values.shape(),
        });
    }
    let code_histogram = code_histogram(p);
    let block = (h.n() / dict.c()).max(1);
    Ok(CollapseReport {
        singular_values: singular_spectrum(h),
        gmm_entropies: gmm_entropy_grid(&h.values, &cfg.component_grid, cfg.mc_samples, cfg.seed)?,
        gmm_entropies_representation: gmm_entropy_grid(
            z,
            &cfg.component_grid,
            cfg.mc_samples,
            rng::mix(cfg.seed, 0x2),
        )?,
        empty_codes: code_histogram.iter().filter(|&&k| k == 0).count(),
        code_histogram,
        prediction_variance: prediction_variance(p),
        covariance_residual: oracle::check_covariance(h)?,
        adjacency_block_residual: oracle::check_adjacency(h, dict, block)?.block_residual,
        representation_rank: representation_rank(z, cfg.rank_tol),
    })
}
