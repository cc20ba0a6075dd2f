//! Network-free checks of the optimality structure of the objective.
//!
//! [`optimize_simplex`] minimizes the loss directly over free logits for `P`
//! and `P'`; [`check_lemma1`] measures how far a pair is from the invariance,
//! extrema and matched-prior conditions. The embedding checks
//! ([`check_alignment`], [`check_covariance`], [`check_adjacency`]) test the
//! alignment structure of `H` against an exactly orthogonal dictionary, and
//! [`aligned_construction`] builds the ideal `H = A^T W^T` they expect.

use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::autodiff::Tape;
use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::loss::{self, LossVariant, Prior};
use crate::projector::{EmbeddingMatrix, ProbMatrix};
use crate::rng;
use crate::tensor::Tensor;
use crate::trainer::adam::AdamState;

/// Residuals of a `(P, P')` pair against the three optimality conditions.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Lemma1Report {
    /// `max_ij |p_ij - p'_ij|`
    pub invariance_residual: f64,
    /// Largest L-infinity distance of a row of `P` to its nearest eps-extreme point.
    pub extrema_residual: f64,
    /// `max_j |pbar_j - q_j|`
    pub prior_residual: f64,
    /// Rows of `P` whose largest entry sits on each code.
    pub count_per_code: Vec<usize>,
    /// `((q_j - eps) / (1 - c eps)) n`
    pub expected_count_per_code: Vec<f64>,
    /// Smallest row maximum of `P`.
    pub min_row_max: f64,
    /// Loss of the eps-clipped pair minus the lower bound at eps.
    pub loss_gap: f64,
    /// Loss of the unclipped pair.
    pub final_loss: f64,
    /// All conditions met within tolerance.
    pub converged: bool,
    /// Some code has no rows.
    pub cluster_collapse: bool,
}

/// Residual thresholds that declare convergence.
#[derive(Clone, Copy, Debug)]
pub struct Lemma1Tolerance {
    pub invariance: f64,
    pub row_max: f64,
    pub prior: f64,
    pub count_slack: f64,
}

impl Default for Lemma1Tolerance {
    fn default() -> Self {
        Lemma1Tolerance {
            invariance: 1e-2,
            row_max: 0.99,
            prior: 1e-2,
            count_slack: 1.0,
        }
    }
}

/// Measures a pair against the optimality conditions. `beta` and `variant`
/// only enter the loss fields.
pub fn check_lemma1(
    p: &ProbMatrix,
    p_prime: &ProbMatrix,
    prior: &Prior,
    epsilon: f64,
    beta: f64,
    variant: LossVariant,
) -> Result<Lemma1Report> {
    p.values.same_shape(&p_prime.values, "check_lemma1")?;
    if prior.c() != p.c() {
        return Err(Error::Shape {
            op: "check_lemma1",
            left: p.values.shape(),
            right: (1, prior.c()),
        });
    }
    let (n, c) = (p.n(), p.c());
    let invariance_residual = p.values.max_abs_diff(&p_prime.values)?;

    let hi = 1.0 - epsilon * (c as f64 - 1.0);
    let mut extrema_residual: f64 = 0.0;
    let mut min_row_max = f64::INFINITY;
    let argmax = p.argmax();
    let mut count_per_code = vec![0usize; c];
    for (i, &j) in argmax.iter().enumerate() {
        count_per_code[j] += 1;
        let row = p.values.row(i);
        min_row_max = min_row_max.min(row[j]);
        for (k, &v) in row.iter().enumerate() {
            let target = if k == j { hi } else { epsilon };
            extrema_residual = extrema_residual.max((v - target).abs());
        }
    }

    let prior_residual = p
        .values
        .column_means()
        .iter()
        .zip(prior.probs())
        .map(|(m, q)| (m - q).abs())
        .fold(0.0, f64::max);
    let expected_count_per_code: Vec<f64> = prior
        .probs()
        .iter()
        .map(|&q| (q - epsilon) / (1.0 - c as f64 * epsilon) * n as f64)
        .collect();

    let final_loss = loss::total_loss(p, p_prime, prior, beta, epsilon, variant)?.total;
    let clipped = loss::total_loss(
        &p.clip(epsilon)?,
        &p_prime.clip(epsilon)?,
        prior,
        beta,
        epsilon,
        variant,
    )?;

    let tol = Lemma1Tolerance::default();
    let counts_ok = count_per_code
        .iter()
        .zip(&expected_count_per_code)
        .all(|(&got, &want)| (got as f64 - want).abs() <= tol.count_slack);
    let converged = invariance_residual < tol.invariance
        && min_row_max > tol.row_max
        && prior_residual < tol.prior
        && counts_ok;
    Ok(Lemma1Report {
        invariance_residual,
        extrema_residual,
        prior_residual,
        cluster_collapse: count_per_code.contains(&0),
        count_per_code,
        expected_count_per_code,
        min_row_max,
        loss_gap: clipped.certificate_gap,
        final_loss,
        converged,
    })
}

/// Direct minimization of the objective over free logits.
#[derive(Clone, Debug)]
pub struct SimplexProblem {
    pub n: usize,
    pub c: usize,
    pub prior: Prior,
    pub beta: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub steps: usize,
    pub lr: f64,
    pub variant: LossVariant,
    /// Std of the logit offset shared by every row.
    pub shared_init: f64,
    /// Std of the per-row logit perturbation.
    pub row_init: f64,
}

impl SimplexProblem {
    pub fn uniform(n: usize, c: usize, beta: f64, seed: u64) -> Self {
        SimplexProblem {
            n,
            c,
            prior: Prior::uniform(c),
            beta,
            epsilon: 1e-8,
            seed,
            steps: 5000,
            lr: 0.1,
            variant: LossVariant::ForwardCe,
            shared_init: 0.3,
            row_init: 0.01,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SimplexRun {
    pub p: ProbMatrix,
    pub p_prime: ProbMatrix,
    pub report: Lemma1Report,
    pub loss_trace: Vec<f64>,
}

/// Runs Adam on the logits of `P` and `P'` from a seeded start.
///
/// Both logit matrices start from a common random offset plus a small
/// per-row perturbation, the way a freshly initialised network maps every
/// input to nearly the same output. Non-convergence is reported through
/// `report.converged`, not as an error.
pub fn optimize_simplex(problem: &SimplexProblem) -> Result<SimplexRun> {
    let SimplexProblem { n, c, .. } = *problem;
    if n == 0 || c < 2 {
        return Err(Error::param("n/c", format!("need n >= 1 and c >= 2, got {n}, {c}")));
    }
    if problem.prior.c() != c {
        return Err(Error::param("prior", format!("has {} codes, expected {c}", problem.prior.c())));
    }
    loss::check_beta(problem.beta)?;
    let mut r = rng::stream(problem.seed, 0x5179);
    let mut normal = |s: f64| -> f64 {
        let z: f64 = StandardNormal.sample(&mut r);
        s * z
    };
    let shared: Vec<f64> = (0..c).map(|_| normal(problem.shared_init)).collect();
    let mut logits = Tensor::from_fn(n, c, |_, j| shared[j]);
    logits.data_mut().iter_mut().for_each(|v| *v += normal(problem.row_init));
    let mut logits_prime = logits.clone();
    logits_prime.data_mut().iter_mut().for_each(|v| *v += normal(problem.row_init));

    let mut adam = AdamState::new([&logits, &logits_prime]);
    let mut loss_trace = Vec::with_capacity(problem.steps);
    for _ in 0..problem.steps {
        let tape = Tape::new();
        let a = tape.param(logits.clone());
        let b = tape.param(logits_prime.clone());
        let (loss, _) = loss::total_loss_on_tape(
            a.softmax_rows(1.0)?,
            b.softmax_rows(1.0)?,
            &problem.prior,
            problem.beta,
            problem.epsilon,
            problem.variant,
        )?;
        let value = loss.item();
        if !value.is_finite() {
            return Err(Error::NonFinite("simplex optimization".into()));
        }
        loss_trace.push(value);
        let grads = tape.backward(loss)?;
        let (ga, gb) = (grads.wrt(a), grads.wrt(b));
        drop(grads);
        adam.step(&mut [&mut logits, &mut logits_prime], &[ga, gb], problem.lr)?;
    }
    let p = ProbMatrix::new(crate::autodiff::softmax_rows_value(&logits, 1.0)?)?;
    let p_prime = ProbMatrix::new(crate::autodiff::softmax_rows_value(&logits_prime, 1.0)?)?;
    let report = check_lemma1(
        &p,
        &p_prime,
        &problem.prior,
        problem.epsilon,
        problem.beta,
        problem.variant,
    )?;
    Ok(SimplexRun {
        p,
        p_prime,
        report,
        loss_trace,
    })
}

/// Alignment of each embedding row with the code basis.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AlignmentReport {
    pub per_row_best_code: Vec<usize>,
    pub per_row_alpha: Vec<f64>,
    /// Largest distance of an alpha to `{1/sqrt(n), (1 - 2/c)/sqrt(n)}`.
    pub alpha_residual: f64,
    /// Largest norm of `(alpha - 1/sqrt(n)) sum_{k != j} w_k`.
    pub spurious_norm: f64,
    /// Largest norm of `h_i` minus its reconstruction from alpha alone.
    pub structure_residual: f64,
    /// Residuals below `tolerance`.
    pub optimal: bool,
    pub tolerance: f64,
}

/// Projects every row of `h` onto an exactly orthogonal square dictionary
/// and compares it with the optimal-embedding form
/// `h_i = alpha w_j + (alpha - 1/sqrt(n)) sum_{k != j} w_k`.
pub fn check_alignment(
    h: &EmbeddingMatrix,
    dict: &Dictionary,
    n: usize,
    tolerance: f64,
) -> Result<AlignmentReport> {
    if dict.c() != dict.f() || !dict.is_exactly_orthogonal() {
        return Err(Error::param(
            "dictionary",
            "alignment check needs a square dictionary with W^T W = f I",
        ));
    }
    if h.f() != dict.f() {
        return Err(Error::Shape {
            op: "check_alignment",
            left: h.values.shape(),
            right: dict.codes().shape(),
        });
    }
    let (f, c) = (dict.f() as f64, dict.c());
    let inv_sqrt_n = 1.0 / (n as f64).sqrt();
    let admissible = [inv_sqrt_n, (1.0 - 2.0 / c as f64) * inv_sqrt_n];
    let coeffs = h.values.matmul(dict.codes())?.scale(1.0 / f);
    let codes = dict.codes();
    let code_sum: Vec<f64> = (0..dict.f())
        .map(|i| codes.row(i).iter().sum())
        .collect();

    let mut best = Vec::with_capacity(h.n());
    let mut alphas = Vec::with_capacity(h.n());
    let (mut alpha_residual, mut spurious_norm, mut structure_residual) = (0.0f64, 0.0f64, 0.0f64);
    for (i, j) in coeffs.row_argmax().into_iter().enumerate() {
        let alpha = coeffs.get(i, j);
        alpha_residual = alpha_residual.max(
            admissible
                .iter()
                .map(|a| (alpha - a).abs())
                .fold(f64::INFINITY, f64::min),
        );
        let off = alpha - inv_sqrt_n;
        let mut sp2 = 0.0;
        let mut st2 = 0.0;
        for k in 0..dict.f() {
            let wj = codes.get(k, j);
            let spurious = off * (code_sum[k] - wj);
            let recon = alpha * wj + spurious;
            sp2 += spurious * spurious;
            st2 += (h.values.get(i, k) - recon).powi(2);
        }
        spurious_norm = spurious_norm.max(sp2.sqrt());
        structure_residual = structure_residual.max(st2.sqrt());
        best.push(j);
        alphas.push(alpha);
    }
    Ok(AlignmentReport {
        per_row_best_code: best,
        per_row_alpha: alphas,
        alpha_residual,
        spurious_norm,
        structure_residual,
        optimal: alpha_residual < tolerance && structure_residual < tolerance,
        tolerance,
    })
}

/// `||H^T H - I||_F / sqrt(f)`.
pub fn check_covariance(h: &EmbeddingMatrix) -> Result<f64> {
    let gram = h.values.transpose().matmul(&h.values)?;
    let f = h.f();
    let resid = gram.zip_map(&Tensor::identity(f), |a, b| a - b)?;
    Ok(resid.frobenius_norm() / (f as f64).sqrt())
}

/// Block structure of the adjacency matrix `H H^T`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AdjacencyReport {
    /// `max |H H^T - f A^T A|` over rows sorted by assigned code.
    pub block_residual: f64,
    /// Connected groups of rows whose adjacency exceeds half the ideal block value.
    pub detected_blocks: usize,
    pub block_sizes: Vec<usize>,
    pub expected_block: usize,
    pub sizes_match: bool,
}

/// Sorts rows by their dominant code and compares `H H^T` with the ideal
/// block pattern: `f/n` between rows sharing a code, `0` elsewhere.
pub fn check_adjacency(
    h: &EmbeddingMatrix,
    dict: &Dictionary,
    expected_block: usize,
) -> Result<AdjacencyReport> {
    let assign = dict.assign(&h.values)?;
    let mut order: Vec<usize> = (0..h.n()).collect();
    order.sort_by_key(|&i| (assign[i], i));
    let sorted = h.values.select_rows(&order);
    let labels: Vec<usize> = order.iter().map(|&i| assign[i]).collect();
    let adj = sorted.matmul(&sorted.transpose())?;
    let n = h.n();
    let block_value = h.f() as f64 / n as f64;

    let mut block_residual: f64 = 0.0;
    for a in 0..n {
        for b in 0..n {
            let ideal = if labels[a] == labels[b] { block_value } else { 0.0 };
            block_residual = block_residual.max((adj.get(a, b) - ideal).abs());
        }
    }

    // union-find over strong links
    let mut parent: Vec<usize> = (0..n).collect();
    fn root(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for a in 0..n {
        for b in a + 1..n {
            if adj.get(a, b) > 0.5 * block_value {
                let (ra, rb) = (root(&mut parent, a), root(&mut parent, b));
                if ra != rb {
                    parent[rb] = ra;
                }
            }
        }
    }
    let mut sizes = std::collections::BTreeMap::new();
    for i in 0..n {
        *sizes.entry(root(&mut parent, i)).or_insert(0usize) += 1;
    }
    let block_sizes: Vec<usize> = sizes.into_values().collect();
    Ok(AdjacencyReport {
        block_residual,
        detected_blocks: block_sizes.len(),
        sizes_match: block_sizes.iter().all(|&s| s == expected_block),
        block_sizes,
        expected_block,
    })
}

/// The ideal embedding `H = A^T W^T`: `n / c` consecutive rows per code,
/// each equal to `w_j / sqrt(n)`.
pub fn aligned_construction(dict: &Dictionary, n: usize) -> Result<EmbeddingMatrix> {
    let c = dict.c();
    if !n.is_multiple_of(c) {
        return Err(Error::param("n", format!("{n} is not divisible by c={c}")));
    }
    let per = n / c;
    let s = 1.0 / (n as f64).sqrt();
    Ok(EmbeddingMatrix::new(Tensor::from_fn(n, dict.f(), |i, k| {
        dict.codes().get(k, i / per) * s
    })))
}

/// Embedding rows on the second admissible branch,
/// `h_i = alpha w_j + (alpha - 1/sqrt(n)) sum_{k != j} w_k` with
/// `alpha = (1 - 2/c)/sqrt(n)`.
pub(crate) fn second_branch_row(dict: &Dictionary, n: usize, j: usize) -> Vec<f64> {
    let c = dict.c() as f64;
    let alpha = (1.0 - 2.0 / c) / (n as f64).sqrt();
    let off = alpha - 1.0 / (n as f64).sqrt();
    (0..dict.f())
        .map(|k| {
            let row = dict.codes().row(k);
            alpha * row[j] + off * (row.iter().sum::<f64>() - row[j])
        })
        .collect()
}
