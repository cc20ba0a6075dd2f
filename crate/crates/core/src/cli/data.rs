//! Dataset generation and CSV ingestion.
//!
//! CSV layout: optional first column `label` (integer, `-1` = unlabeled),
//! remaining columns are features. No quoting, UTF-8, LF line endings.

use std::fmt::Write as _;
use std::path::Path;

use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

pub const UNLABELED: i64 = -1;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: Tensor,
    pub labels: Vec<i64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Rows with a non-negative label, as `(row indices, labels)`.
    pub fn labeled(&self) -> (Vec<usize>, Vec<usize>) {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &y)| y >= 0)
            .map(|(i, &y)| (i, y as usize))
            .unzip()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("label");
        for j in 0..self.dim() {
            let _ = write!(out, ",x{j}");
        }
        out.push('\n');
        for (row, y) in self.features.iter_rows().zip(&self.labels) {
            let _ = write!(out, "{y}");
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str, source: &str) -> Result<Dataset> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::Data(format!("{source}: empty file")))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        let has_label = cols[0] == "label";
        let dim = cols.len() - has_label as usize;
        if dim == 0 {
            return Err(Error::Data(format!("{source}: no feature columns")));
        }
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for (i, line) in lines {
            let at = || format!("{source}:{}", i + 1);
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != cols.len() {
                return Err(Error::Data(format!(
                    "{}: expected {} fields, found {}",
                    at(),
                    cols.len(),
                    fields.len()
                )));
            }
            let feats = if has_label {
                let y: i64 = fields[0]
                    .parse()
                    .map_err(|e| Error::Data(format!("{}: bad label `{}`: {e}", at(), fields[0])))?;
                if y < UNLABELED {
                    return Err(Error::Data(format!("{}: label {y} below -1", at())));
                }
                labels.push(y);
                &fields[1..]
            } else {
                labels.push(UNLABELED);
                &fields[..]
            };
            for v in feats {
                let x: f64 = v
                    .parse()
                    .map_err(|e| Error::Data(format!("{}: bad value `{v}`: {e}", at())))?;
                if !x.is_finite() {
                    return Err(Error::Data(format!("{}: non-finite value `{v}`", at())));
                }
                data.push(x);
            }
        }
        let n = labels.len();
        Ok(Dataset {
            features: Tensor::from_vec(n, dim, data)?,
            labels,
        })
    }

    pub fn load(path: &Path) -> Result<Dataset> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Dataset::from_csv(&text, &path.display().to_string())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Isotropic Gaussian clusters around means drawn uniformly on the unit
/// sphere; rows are grouped by cluster.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClusterSpec {
    pub clusters: usize,
    pub dim: usize,
    pub per_cluster: usize,
    pub spread: f64,
}

impl Default for ClusterSpec {
    fn default() -> Self {
        ClusterSpec {
            clusters: 4,
            dim: 16,
            per_cluster: 250,
            spread: 0.15,
        }
    }
}

pub fn gaussian_clusters(spec: &ClusterSpec, seed: u64) -> Result<Dataset> {
    let ClusterSpec {
        clusters,
        dim,
        per_cluster,
        spread,
    } = *spec;
    if clusters == 0 || dim == 0 || per_cluster == 0 {
        return Err(Error::param("clusters/dim/per_cluster", "counts must be >= 1"));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::param("spread", format!("must be >= 0, got {spread}")));
    }
    let mut r = rng::stream(seed, 0xDA7A);
    let means: Vec<Vec<f64>> = (0..clusters)
        .map(|_| loop {
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut r)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                break v.iter().map(|x| x / norm).collect();
            }
        })
        .collect();
    let noise = Normal::new(0.0, spread).expect("validated spread");
    let n = clusters * per_cluster;
    let mut labels = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * dim);
    for (k, mean) in means.iter().enumerate() {
        for _ in 0..per_cluster {
            labels.push(k as i64);
            for &m in mean {
                data.push(if spread > 0.0 { m + noise.sample(&mut r) } else { m });
            }
        }
    }
    Ok(Dataset {
        features: Tensor::from_vec(n, dim, data)?,
        labels,
    })
}
