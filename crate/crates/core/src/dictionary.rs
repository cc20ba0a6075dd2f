//! The frozen bipolar code matrix and its quasi-orthogonality statistics.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

/// How a [`Dictionary`] was built; enough to regenerate it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DictionaryKind {
    Rademacher { seed: u64 },
    Hadamard,
}

/// An `f x c` matrix of `+-1` codes; column `j` is code `w_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dictionary {
    f: usize,
    c: usize,
    kind: DictionaryKind,
    codes: Tensor,
}

/// Summary of the off-diagonal cosine similarities between codes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OrthogonalityStats {
    pub mean_offdiag_cosine: f64,
    pub var_offdiag_cosine: f64,
    pub max_abs_offdiag_cosine: f64,
    pub theoretical_var: f64,
    pub pairs: usize,
}

impl Dictionary {
    /// Draws every entry i.i.d. uniform on `{-1, +1}`.
    pub fn sample(f: usize, c: usize, seed: u64) -> Result<Self> {
        if f == 0 {
            return Err(Error::param("f", "must be at least 1"));
        }
        if c == 0 {
            return Err(Error::param("c", "must be at least 1"));
        }
        let mut rng = rng::from_seed(seed);
        let codes = Tensor::from_fn(f, c, |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 });
        Ok(Dictionary {
            f,
            c,
            kind: DictionaryKind::Rademacher { seed },
            codes,
        })
    }

    /// Sylvester-Hadamard matrix of order `f`, which satisfies `W^T W = f I`.
    pub fn hadamard(f: usize) -> Result<Self> {
        if f == 0 || !f.is_power_of_two() {
            return Err(Error::Construction(format!(
                "Sylvester-Hadamard order must be a power of two, got {f}"
            )));
        }
        let mut h = vec![vec![1i8]];
        while h.len() < f {
            let k = h.len();
            let mut next = vec![vec![0i8; 2 * k]; 2 * k];
            for i in 0..k {
                for j in 0..k {
                    let v = h[i][j];
                    next[i][j] = v;
                    next[i][j + k] = v;
                    next[i + k][j] = v;
                    next[i + k][j + k] = -v;
                }
            }
            h = next;
        }
        let codes = Tensor::from_fn(f, f, |i, j| h[i][j] as f64);
        Ok(Dictionary {
            f,
            c: f,
            kind: DictionaryKind::Hadamard,
            codes,
        })
    }

    /// Rebuilds a dictionary from its descriptor.
    pub fn regenerate(f: usize, c: usize, kind: DictionaryKind) -> Result<Self> {
        match kind {
            DictionaryKind::Rademacher { seed } => Self::sample(f, c, seed),
            DictionaryKind::Hadamard => {
                let d = Self::hadamard(f)?;
                if d.c != c {
                    return Err(Error::Construction(format!(
                        "Hadamard dictionary is square, got f={f} c={c}"
                    )));
                }
                Ok(d)
            }
        }
    }

    pub fn f(&self) -> usize {
        self.f
    }

    pub fn c(&self) -> usize {
        self.c
    }

    pub fn kind(&self) -> DictionaryKind {
        self.kind
    }

    pub fn seed(&self) -> Option<u64> {
        match self.kind {
            DictionaryKind::Rademacher { seed } => Some(seed),
            DictionaryKind::Hadamard => None,
        }
    }

    /// The `f x c` code matrix.
    pub fn codes(&self) -> &Tensor {
        &self.codes
    }

    pub fn code(&self, j: usize) -> Vec<f64> {
        self.codes.column(j)
    }

    /// Exact integer Gram matrix `W^T W`.
    pub fn gram(&self) -> Vec<Vec<i64>> {
        let signs: Vec<Vec<i64>> = (0..self.c)
            .map(|j| (0..self.f).map(|i| self.codes.get(i, j) as i64).collect())
            .collect();
        (0..self.c)
            .map(|a| {
                (0..self.c)
                    .map(|b| signs[a].iter().zip(&signs[b]).map(|(x, y)| x * y).sum())
                    .collect()
            })
            .collect()
    }

    /// Whether `W^T W = f I` holds exactly.
    pub fn is_exactly_orthogonal(&self) -> bool {
        let f = self.f as i64;
        self.gram().iter().enumerate().all(|(a, row)| {
            row.iter()
                .enumerate()
                .all(|(b, &v)| v == if a == b { f } else { 0 })
        })
    }

    /// Statistics over all `c(c-1)/2` distinct code pairs.
    pub fn cosine_stats(&self) -> Result<OrthogonalityStats> {
        if self.c < 2 {
            return Err(Error::param("c", "cosine statistics need at least 2 codes"));
        }
        let gram = self.gram();
        let f = self.f as f64;
        let mut cosines = Vec::with_capacity(self.c * (self.c - 1) / 2);
        for a in 0..self.c {
            for b in a + 1..self.c {
                cosines.push(gram[a][b] as f64 / f);
            }
        }
        let pairs = cosines.len() as f64;
        let mean = cosines.iter().sum::<f64>() / pairs;
        let var = cosines.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / pairs;
        let max_abs = cosines.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Ok(OrthogonalityStats {
            mean_offdiag_cosine: mean,
            var_offdiag_cosine: var,
            max_abs_offdiag_cosine: max_abs,
            theoretical_var: 1.0 / f,
            pairs: cosines.len(),
        })
    }

    /// Index of the code with the largest inner product, per row of `h`.
    pub fn assign(&self, h: &Tensor) -> Result<Vec<usize>> {
        Ok(h.matmul(&self.codes)?.row_argmax())
    }

    /// Text descriptor; codes are regenerated from it rather than stored.
    pub fn descriptor(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Dictionary {
    fn fmt(&self, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(out, "cplearn-dictionary v1")?;
        writeln!(out, "f={}", self.f)?;
        writeln!(out, "c={}", self.c)?;
        match self.kind {
            DictionaryKind::Rademacher { seed } => {
                writeln!(out, "kind=rademacher")?;
                writeln!(out, "seed={seed}")
            }
            DictionaryKind::Hadamard => writeln!(out, "kind=hadamard"),
        }
    }
}

impl FromStr for Dictionary {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let bad = |line: usize, reason: String| Error::Config {
            location: format!("dictionary line {line}"),
            reason,
        };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, "cplearn-dictionary v1")) => {}
            _ => return Err(bad(1, "missing `cplearn-dictionary v1` header".into())),
        }
        let (mut f, mut c, mut kind, mut seed) = (None, None, None, None);
        for (i, line) in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(i + 1, format!("expected key=value, got `{line}`")))?;
            let num = |v: &str| {
                v.parse::<u64>()
                    .map_err(|e| bad(i + 1, format!("`{k}`: {e}")))
            };
            match k {
                "f" => f = Some(num(v)? as usize),
                "c" => c = Some(num(v)? as usize),
                "seed" => seed = Some(num(v)?),
                "kind" => kind = Some(v.to_string()),
                other => return Err(bad(i + 1, format!("unknown key `{other}`"))),
            }
        }
        let f = f.ok_or_else(|| bad(0, "missing `f`".into()))?;
        let c = c.ok_or_else(|| bad(0, "missing `c`".into()))?;
        let kind = match kind.as_deref() {
            Some("rademacher") => DictionaryKind::Rademacher {
                seed: seed.ok_or_else(|| bad(0, "missing `seed`".into()))?,
            },
            Some("hadamard") => DictionaryKind::Hadamard,
            other => return Err(bad(0, format!("unknown dictionary kind {other:?}"))),
        };
        Dictionary::regenerate(f, c, kind)
    }
}
