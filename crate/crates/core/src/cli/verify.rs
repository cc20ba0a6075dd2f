//! Self-checks of the optimality structure at fixed small sizes.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::Serialize;

use crate::dictionary::Dictionary;
use crate::error::Result;
use crate::loss::{LossVariant, Prior};
use crate::oracle::{self, optimize_simplex, SimplexProblem};
use crate::projector::{EmbeddingMatrix, ProbMatrix};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Lemma1,
    Embedding,
    Dictionary,
    All,
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "lemma1" => Ok(Suite::Lemma1),
            "embedding" => Ok(Suite::Embedding),
            "dictionary" => Ok(Suite::Dictionary),
            "all" => Ok(Suite::All),
            o => Err(format!("unknown suite `{o}` (lemma1, embedding, dictionary, all)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    Below,
    AtLeast,
    Info,
}

/// One claim with its measured value and threshold.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckRow {
    pub claim: String,
    pub value: f64,
    pub threshold: f64,
    pub comparison: Comparison,
}

impl CheckRow {
    fn below(claim: impl Into<String>, value: f64, threshold: f64) -> Self {
        CheckRow {
            claim: claim.into(),
            value,
            threshold,
            comparison: Comparison::Below,
        }
    }

    fn at_least(claim: impl Into<String>, value: f64, threshold: f64) -> Self {
        CheckRow {
            claim: claim.into(),
            value,
            threshold,
            comparison: Comparison::AtLeast,
        }
    }

    fn info(claim: impl Into<String>, value: f64) -> Self {
        CheckRow {
            claim: claim.into(),
            value,
            threshold: f64::NAN,
            comparison: Comparison::Info,
        }
    }

    /// `None` for informational rows.
    pub fn passed(&self) -> Option<bool> {
        match self.comparison {
            Comparison::Below => Some(self.value < self.threshold),
            Comparison::AtLeast => Some(self.value >= self.threshold),
            Comparison::Info => None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct VerifyReport {
    pub rows: Vec<CheckRow>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed() != Some(false))
    }

    pub fn row(&self, claim_prefix: &str) -> Option<&CheckRow> {
        self.rows.iter().find(|r| r.claim.starts_with(claim_prefix))
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.rows.iter().map(|r| r.claim.len()).max().unwrap_or(5).max(5);
        writeln!(f, "{:<width$}  {:>12}  {:>14}  verdict", "claim", "value", "threshold")?;
        for r in &self.rows {
            let (thr, verdict) = match (r.comparison, r.passed()) {
                (Comparison::Info, _) => (String::from("-"), "info"),
                (Comparison::Below, Some(p)) => (format!("< {:.3e}", r.threshold), if p { "pass" } else { "FAIL" }),
                (_, p) => (
                    format!(">= {:.3e}", r.threshold),
                    if p == Some(true) { "pass" } else { "FAIL" },
                ),
            };
            writeln!(f, "{:<width$}  {:>12.4e}  {:>14}  {verdict}", r.claim, r.value, thr)?;
        }
        Ok(())
    }
}

pub const LEMMA1_N: usize = 60;
pub const LEMMA1_C: usize = 6;
pub const LEMMA1_SEEDS: u64 = 5;

fn lemma1(seed: u64, rows: &mut Vec<CheckRow>) -> Result<()> {
    let (n, c, eps) = (LEMMA1_N, LEMMA1_C, 1e-8);
    let hi = 1.0 - eps * (c as f64 - 1.0);
    let opt = ProbMatrix::new(Tensor::from_fn(n, c, |i, j| if i % c == j { hi } else { eps }))?;
    let r = oracle::check_lemma1(&opt, &opt, &Prior::uniform(c), eps, 0.5, LossVariant::ForwardCe)?;
    let worst = r.invariance_residual.max(r.extrema_residual).max(r.prior_residual);
    rows.push(CheckRow::below("constructed optimum: max residual", worst, 1e-12));

    let target = (c as f64).ln();
    let mut hits = 0;
    for s in seed..seed + LEMMA1_SEEDS {
        let run = optimize_simplex(&SimplexProblem::uniform(n, c, 0.5, s))?.report;
        let exact = run.count_per_code.iter().all(|&k| k == n / c);
        let ok = run.converged && exact && (run.final_loss - target).abs() < 1e-3;
        hits += ok as usize;
        rows.push(CheckRow::info(
            format!("beta=0.5 seed {s}: |loss - log c| (counts {:?})", run.count_per_code),
            (run.final_loss - target).abs(),
        ));
    }
    rows.push(CheckRow::at_least(
        "beta=0.5: share of seeds at log c with exact counts",
        hits as f64 / LEMMA1_SEEDS as f64,
        0.8,
    ));

    let mut collapsed = 0;
    for s in seed..seed + LEMMA1_SEEDS {
        collapsed += optimize_simplex(&SimplexProblem::uniform(n, c, 10.0, s))?
            .report
            .cluster_collapse as usize;
    }
    rows.push(CheckRow::at_least(
        "beta=10: share of seeds with an empty code",
        collapsed as f64 / LEMMA1_SEEDS as f64,
        0.8,
    ));
    Ok(())
}

fn embedding(rows: &mut Vec<CheckRow>) -> Result<()> {
    let dict = Dictionary::hadamard(4)?;
    let n = 8;
    let h = oracle::aligned_construction(&dict, n)?;
    let a = oracle::check_alignment(&h, &dict, n, 1e-10)?;
    let alpha_dev = a
        .per_row_alpha
        .iter()
        .map(|x| (x - 1.0 / (n as f64).sqrt()).abs())
        .fold(0.0, f64::max);
    rows.push(CheckRow::below("alpha = 1/sqrt(n): max deviation", alpha_dev, 1e-10));
    rows.push(CheckRow::below("spurious term norm", a.spurious_norm, 1e-10));
    rows.push(CheckRow::below(
        "||H^T H - I||_F / sqrt(f)",
        oracle::check_covariance(&h)?,
        1e-10,
    ));
    let adj = oracle::check_adjacency(&h, &dict, n / dict.c())?;
    rows.push(CheckRow::below("adjacency block residual", adj.block_residual, 1e-10));
    rows.push(CheckRow::below(
        "adjacency block count deviation from c",
        (adj.detected_blocks as f64 - dict.c() as f64).abs(),
        0.5,
    ));
    rows.push(CheckRow::at_least(
        "adjacency blocks of size n/c",
        adj.sizes_match as u8 as f64,
        1.0,
    ));

    let n2 = 16;
    let rows2: Vec<Vec<f64>> = (0..n2)
        .map(|i| oracle::second_branch_row(&dict, n2, i % dict.c()))
        .collect();
    let h2 = EmbeddingMatrix::new(Tensor::from_rows(&rows2)?);
    let a2 = oracle::check_alignment(&h2, &dict, n2, 1e-10)?;
    let dev2 = a2.per_row_alpha.iter().map(|x| (x - 0.125).abs()).fold(0.0, f64::max);
    rows.push(CheckRow::below("second branch alpha = (1-2/c)/sqrt(n)", dev2, 1e-10));
    Ok(())
}

fn dictionary(seed: u64, rows: &mut Vec<CheckRow>) -> Result<()> {
    let d = Dictionary::sample(100, 500, seed)?;
    let s = d.cosine_stats()?;
    rows.push(CheckRow::below(
        "f=100 c=500: |var / (1/f) - 1|",
        (s.var_offdiag_cosine / s.theoretical_var - 1.0).abs(),
        0.2,
    ));
    rows.push(CheckRow::below(
        "f=100 c=500: |mean cosine|",
        s.mean_offdiag_cosine.abs(),
        4.0 * (s.theoretical_var / s.pairs as f64).sqrt() + 1e-3,
    ));
    let hd = Dictionary::hadamard(64)?;
    rows.push(CheckRow::at_least(
        "hadamard f=64 exactly orthogonal",
        hd.is_exactly_orthogonal() as u8 as f64,
        1.0,
    ));
    Ok(())
}

pub fn verify(suite: Suite, seed: u64) -> Result<VerifyReport> {
    let mut rows = Vec::new();
    if matches!(suite, Suite::Lemma1 | Suite::All) {
        lemma1(seed, &mut rows)?;
    }
    if matches!(suite, Suite::Embedding | Suite::All) {
        embedding(&mut rows)?;
    }
    if matches!(suite, Suite::Dictionary | Suite::All) {
        dictionary(seed, &mut rows)?;
    }
    Ok(VerifyReport { rows })
}

/// Renders the report and its verdict line.
pub fn render(report: &VerifyReport) -> String {
    let mut s = report.to_string();
    let _ = writeln!(s, "{}", if report.passed() { "PASS" } else { "FAIL" });
    s
}
