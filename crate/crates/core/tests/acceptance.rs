//! Acceptance criteria, one verdict line each. Runs sequentially so the
//! reported wall-clock times reflect a single core.

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use cplearn::cli::run::{run_train, RunConfig, RunReport, CHECKPOINT_FILE, METRICS_FILE};
use cplearn::config::KvEntry;
use cplearn::loss::{self, lower_bound};
use cplearn::oracle::{self, optimize_simplex, SimplexProblem};
use cplearn::trainer::{augment, composed_loss, TrainConfig, Trainer};
use cplearn::{
    grad_check, Activation, Dictionary, LossVariant, Prior, ProbMatrix, Result, Tape, Tensor, Var,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    passed: bool,
    detail: String,
}

impl Verdict {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Verdict {
            passed,
            detail: detail.into(),
        }
    }
}

struct Criterion {
    id: &'static str,
    name: &'static str,
    budget: Duration,
    run: fn(&mut Shared) -> Result<Verdict>,
}

#[derive(Default)]
struct Shared {
    desk_runs: Vec<(usize, RunReport, tempfile::TempDir)>,
}

fn main() -> ExitCode {
    let criteria = [
        Criterion {
            id: "1",
            name: "simplex optimality certificate",
            budget: Duration::from_secs(120),
            run: criterion_1,
        },
        Criterion {
            id: "2",
            name: "beta-collapse regime",
            budget: Duration::from_secs(120),
            run: criterion_2,
        },
        Criterion {
            id: "3",
            name: "exact embedding oracle",
            budget: Duration::from_secs(1),
            run: criterion_3,
        },
        Criterion {
            id: "4",
            name: "quasi-orthogonality statistics",
            budget: Duration::from_secs(5),
            run: criterion_4,
        },
        Criterion {
            id: "5",
            name: "gradient fidelity",
            budget: Duration::from_secs(30),
            run: criterion_5,
        },
        Criterion {
            id: "6",
            name: "end-to-end desk experiment",
            budget: Duration::from_secs(600),
            run: criterion_6,
        },
        Criterion {
            id: "6-inv",
            name: "desk experiment invariants",
            budget: Duration::from_secs(1),
            run: desk_invariants,
        },
        Criterion {
            id: "7",
            name: "loss bound invariant",
            budget: Duration::from_secs(5),
            run: criterion_7,
        },
        Criterion {
            id: "8",
            name: "reverse-KL robustness",
            budget: Duration::from_secs(1),
            run: criterion_8,
        },
        Criterion {
            id: "9",
            name: "determinism",
            budget: Duration::from_secs(1200),
            run: criterion_9,
        },
    ];

    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut shared = Shared::default();
    let mut failures = 0;
    for c in &criteria {
        if !filter.is_empty() && !filter.iter().any(|f| f == c.id) {
            continue;
        }
        let start = Instant::now();
        let outcome = (c.run)(&mut shared);
        let elapsed = start.elapsed();
        let (passed, detail) = match outcome {
            Ok(v) => {
                let in_time = elapsed <= c.budget;
                let time_note = if in_time { String::new() } else { "; over time budget".into() };
                (v.passed && in_time, format!("{}{time_note}", v.detail))
            }
            Err(e) => (false, format!("error: {e}")),
        };
        failures += !passed as usize;
        println!(
            "criterion {:<5} {} {} ({:.2}s / {}s): {}",
            c.id,
            if passed { "PASS" } else { "FAIL" },
            c.name,
            elapsed.as_secs_f64(),
            c.budget.as_secs(),
            detail
        );
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} acceptance criteria failed");
        ExitCode::FAILURE
    }
}

const SIMPLEX_SEEDS: std::ops::Range<u64> = 0..5;

fn criterion_1(_: &mut Shared) -> Result<Verdict> {
    let (n, c) = (60, 6);
    let target = (c as f64).ln();
    let mut hits = 0;
    let mut notes = Vec::new();
    for seed in SIMPLEX_SEEDS {
        let mut problem = SimplexProblem::uniform(n, c, 0.5, seed);
        problem.epsilon = 1e-8;
        problem.steps = 5000;
        let r = optimize_simplex(&problem)?.report;
        let gap = (r.final_loss - target).abs();
        let exact = r.count_per_code.iter().all(|&k| k == n / c);
        let ok = gap < 1e-3 && r.invariance_residual < 1e-2 && r.prior_residual < 1e-2 && exact;
        hits += ok as usize;
        notes.push(format!(
            "seed {seed}: |L-log6|={gap:.1e} inv={:.1e} prior={:.1e} counts={:?}",
            r.invariance_residual, r.prior_residual, r.count_per_code
        ));
    }
    Ok(Verdict::new(
        hits >= 4,
        format!("{hits}/5 seeds certified (need 4); {}", notes.join("; ")),
    ))
}

fn criterion_2(_: &mut Shared) -> Result<Verdict> {
    let (n, c) = (60, 6);
    let mut collapsed = 0;
    let mut empties = Vec::new();
    for seed in SIMPLEX_SEEDS {
        let mut problem = SimplexProblem::uniform(n, c, 10.0, seed);
        problem.epsilon = 1e-8;
        problem.steps = 5000;
        let r = optimize_simplex(&problem)?.report;
        collapsed += r.cluster_collapse as usize;
        empties.push(r.count_per_code.iter().filter(|&&k| k == 0).count());
    }
    Ok(Verdict::new(
        collapsed >= 4,
        format!("{collapsed}/5 seeds with an empty code (need 4); empty codes per seed {empties:?}"),
    ))
}

fn criterion_3(_: &mut Shared) -> Result<Verdict> {
    let dict = Dictionary::hadamard(4)?;
    let n = 8;
    let h = oracle::aligned_construction(&dict, n)?;
    let a = oracle::check_alignment(&h, &dict, n, 1e-10)?;
    let alpha_dev = a
        .per_row_alpha
        .iter()
        .map(|x| (x - 1.0 / (n as f64).sqrt()).abs())
        .fold(0.0, f64::max);

    let ht = h.values.transpose();
    let cov = ht.matmul(&h.values)?;
    let cov_dev = cov
        .zip_map(&Tensor::identity(4), |a, b| (a - b).powi(2))?
        .sum()
        .sqrt();

    let adj = oracle::check_adjacency(&h, &dict, n / dict.c())?;
    let gram = h.values.matmul(&ht)?;
    let mut block_dev: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let want = if i / 2 == j / 2 { 0.5 } else { 0.0 };
            block_dev = block_dev.max((gram.get(i, j) - want).abs());
        }
    }
    let blocks_ok = adj.detected_blocks == 4 && adj.block_sizes.iter().all(|&s| s == 2);
    let passed = alpha_dev < 1e-10
        && cov_dev < 1e-10
        && adj.block_residual < 1e-10
        && block_dev < 1e-10
        && blocks_ok;
    Ok(Verdict::new(
        passed,
        format!(
            "alpha dev {alpha_dev:.1e}; ||H^T H - I||_F {cov_dev:.1e}; blocks {:?}; adjacency dev {:.1e}",
            adj.block_sizes,
            block_dev.max(adj.block_residual)
        ),
    ))
}

fn criterion_4(_: &mut Shared) -> Result<Verdict> {
    let mut passed = true;
    let mut cells = Vec::new();
    for f in [50usize, 100] {
        for mult in [1usize, 2, 5] {
            let c = f * mult;
            let s = Dictionary::sample(f, c, 1000 + c as u64)?.cosine_stats()?;
            let rel = (s.var_offdiag_cosine * f as f64 - 1.0).abs();
            passed &= rel < 0.2;
            cells.push(format!("f={f},c={c}: {:.1}%", 100.0 * rel));
        }
    }
    Ok(Verdict::new(passed, format!("relative variance error {}", cells.join(", "))))
}

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

fn stochastic(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    let mut t = Tensor::from_fn(r, c, |_, _| -rng.random_range(1e-3f64..1.0).ln());
    for i in 0..r {
        let s: f64 = t.row(i).iter().sum();
        t.row_mut(i).iter_mut().for_each(|v| *v /= s);
    }
    t
}

fn weighted<'t>(tape: &'t Tape, y: Var<'t>, w: &Tensor) -> Result<Var<'t>> {
    Ok(y.mul(tape.constant(w.clone()))?.sum())
}

type Instance = Box<dyn Fn(&mut ChaCha8Rng) -> Result<f64>>;

const GRAD_STEP: f64 = 1e-5;
const GRAD_INSTANCES: u64 = 20;

fn op_checks() -> Vec<(&'static str, Instance)> {
    fn dims(rng: &mut ChaCha8Rng) -> (usize, usize) {
        (rng.random_range(2..7), rng.random_range(2..6))
    }
    vec![
        (
            "matmul.lhs",
            Box::new(|rng| {
                let (r, k) = dims(rng);
                let c = rng.random_range(1..5);
                let (x, b, w) = (random(rng, r, k), random(rng, k, c), random(rng, r, c));
                grad_check(|t, x| weighted(t, x.matmul(t.constant(b.clone()))?, &w), &x, GRAD_STEP)
            }),
        ),
        (
            "matmul.rhs",
            Box::new(|rng| {
                let (r, k) = dims(rng);
                let c = rng.random_range(1..5);
                let (a, x, w) = (random(rng, r, k), random(rng, k, c), random(rng, r, c));
                grad_check(|t, x| weighted(t, t.constant(a.clone()).matmul(x)?, &w), &x, GRAD_STEP)
            }),
        ),
        (
            "add_row.input",
            Box::new(|rng| {
                let (r, c) = dims(rng);
                let (x, b, w) = (random(rng, r, c), random(rng, 1, c), random(rng, r, c));
                grad_check(|t, x| weighted(t, x.add_row(t.constant(b.clone()))?, &w), &x, GRAD_STEP)
            }),
        ),
        (
            "add_row.bias",
            Box::new(|rng| {
                let (r, c) = dims(rng);
                let (a, x, w) = (random(rng, r, c), random(rng, 1, c), random(rng, r, c));
                grad_check(|t, x| weighted(t, t.constant(a.clone()).add_row(x)?, &w), &x, GRAD_STEP)
            }),
        ),
        (
            "add",
            Box::new(|rng| {
                let (r, c) = dims(rng);
                let (x, b, w) = (random(rng, r, c), random(rng, r, c), random(rng, r, c));
                grad_check(|t, x| weighted(t, x.add(t.constant(b.clone()))?, &w), &x, GRAD_STEP)
            }),
        ),
        (
            "mul",
            Box::new(|rng| {
                let (r, c) = dims(rng);
                let (x, b, w) = (random(rng, r, c), random(rng, r, c), random(rng, r, c));
                grad_check(
                    |t, x| weighted(t, x.mul(t.constant(b.clone()))?.add(x.mul(x)?)?, &w),
                    &x,
                    GRAD_STEP,
                )
            }),
        ),
        (
            "scale",
            Box::new(|rng| {
                let (r, c) = dims(rng);
                let k = rng.random_range(-3.0..3.0);
                let (x, w) = (random(rng, r, c), random(rng, r, c));
                grad_check(|t, x| weighted(t, x.scale(k), &w), &x, GRAD_STEP)
            }),
        ),
        (
            "sum",
            Box::new(|rng| {
                let (r, c) = dims(rng);
                let x = random(rng, r, c);
                grad_check(|_, x| Ok(x.mul(x)?.sum()), &x, GRAD_STEP)
            }),
        ),
        (
            "tanh",
            Box::new(|rng| {
                let (r, c) = dims(rng);
                let (x, w) = (random(rng, r, c).scale(2.0), random(rng, r, c));
                grad_check(|t, x| weighted(t, x.tanh(), &w), &x, GRAD_STEP)
            }),
        ),
        (
            "leaky_relu",
            Box::new(|rng| {
                let (r, c) = dims(rng);
                let (x, w) = (random(rng, r, c), random(rng, r, c));
                grad_check(|t, x| weighted(t, x.leaky_relu(0.2), &w), &x, GRAD_STEP)
            }),
        ),
        (
            "batchnorm.input",
            Box::new(|rng| {
                let (r, c) = dims(rng);
                let (x, g, b, w) = (random(rng, r, c), random(rng, 1, c), random(rng, 1, c), random(rng, r, c));
                grad_check(
                    |t, x| weighted(t, x.batchnorm(t.constant(g.clone()), t.constant(b.clone()), 1e-5)?, &w),
                    &x,
                    GRAD_STEP,
                )
            }),
        ),
        (
            "batchnorm.gamma",
            Box::new(|rng| {
                let (r, c) = dims(rng);
                let (a, g, b, w) = (random(rng, r, c), random(rng, 1, c), random(rng, 1, c), random(rng, r, c));
                grad_check(
                    |t, g| weighted(t, t.constant(a.clone()).batchnorm(g, t.constant(b.clone()), 1e-5)?, &w),
                    &g,
                    GRAD_STEP,
                )
            }),
        ),
        (
            "batchnorm.beta",
            Box::new(|rng| {
                let (r, c) = dims(rng);
                let (a, g, b, w) = (random(rng, r, c), random(rng, 1, c), random(rng, 1, c), random(rng, r, c));
                grad_check(
                    |t, b| weighted(t, t.constant(a.clone()).batchnorm(t.constant(g.clone()), b, 1e-5)?, &w),
                    &b,
                    GRAD_STEP,
                )
            }),
        ),
        (
            "l2norm_rows",
            Box::new(|rng| {
                let (r, c) = dims(rng);
                let s = rng.random_range(0.5..2.0);
                let (x, w) = (random(rng, r, c), random(rng, r, c));
                grad_check(|t, x| weighted(t, x.l2norm_rows(s), &w), &x, GRAD_STEP)
            }),
        ),
        (
            "softmax_rows",
            Box::new(|rng| {
                let (r, c) = dims(rng);
                let tau = rng.random_range(0.3..2.0);
                let (x, w) = (random(rng, r, c), random(rng, r, c));
                grad_check(|t, x| weighted(t, x.softmax_rows(tau)?, &w), &x, GRAD_STEP)
            }),
        ),
        (
            "cross_entropy_rows.target",
            Box::new(|rng| {
                let (r, c) = dims(rng);
                let (x, pred) = (random(rng, r, c), stochastic(rng, r, c));
                grad_check(
                    |t, x| x.softmax_rows(1.0)?.cross_entropy_rows(t.constant(pred.clone())),
                    &x,
                    GRAD_STEP,
                )
            }),
        ),
        (
            "cross_entropy_rows.pred",
            Box::new(|rng| {
                let (r, c) = dims(rng);
                let (target, x) = (stochastic(rng, r, c), random(rng, r, c));
                grad_check(
                    |t, x| t.constant(target.clone()).cross_entropy_rows(x.softmax_rows(1.0)?),
                    &x,
                    GRAD_STEP,
                )
            }),
        ),
        (
            "prior_cross_entropy",
            Box::new(|rng| {
                let (r, c) = dims(rng);
                let x = random(rng, r, c);
                let q = stochastic(rng, 1, c).into_vec();
                grad_check(|_, x| x.softmax_rows(0.8)?.prior_cross_entropy(&q), &x, GRAD_STEP)
            }),
        ),
        (
            "reverse_kl_prior",
            Box::new(|rng| {
                let (r, c) = dims(rng);
                let x = random(rng, r, c);
                let q = stochastic(rng, 1, c).into_vec();
                grad_check(|_, x| x.softmax_rows(0.8)?.reverse_kl_prior(&q), &x, GRAD_STEP)
            }),
        ),
    ]
}

/// Worst relative error over every parameter tensor of a small model.
fn composed_instance(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (f, c, d) = (8, [4usize, 8, 16][seed as usize % 3], 5);
    let cfg = TrainConfig {
        f,
        c,
        batch: 12,
        hidden: vec![10],
        beta: rng.random_range(0.1..2.0),
        epsilon: 1e-3,
        activation: if seed.is_multiple_of(2) { Activation::L2Norm } else { Activation::Tanh },
        loss_variant: if seed % 4 < 2 { LossVariant::ForwardCe } else { LossVariant::ReverseKl },
        seed,
        ..TrainConfig::default()
    };
    let t = Trainer::new(cfg, d, Dictionary::sample(f, c, seed)?)?;
    let x = random(&mut rng, 12, d);
    let (va, vb) = augment(&x, &t.config.augment, seed)?;
    let backbone_tensors = t.backbone.tensors().len();
    let mut worst: f64 = 0.0;
    for k in 0..t.parameters().len() {
        let point = t.parameters()[k].clone();
        let err = grad_check(
            |tape, p| {
                let mut bb = t.backbone.on_tape(tape);
                let mut pj = t.projector.on_tape(tape);
                if k < backbone_tensors {
                    let layer = k / 2;
                    if k % 2 == 0 {
                        bb.weights[layer] = p;
                    } else {
                        bb.biases[layer] = p;
                    }
                } else {
                    match k - backbone_tensors {
                        0 => pj.linear_weight = p,
                        1 => pj.linear_bias = p,
                        2 => pj.bn_gamma = p,
                        _ => pj.bn_beta = p,
                    }
                }
                Ok(composed_loss(tape, &bb, &pj, &t.dictionary, &va, &vb, &t.config, t.prior())?.loss)
            },
            &point,
            GRAD_STEP,
        )?;
        worst = worst.max(err);
    }
    Ok(worst)
}

fn criterion_5(_: &mut Shared) -> Result<Verdict> {
    let mut passed = true;
    let mut worst_overall: (f64, &str) = (0.0, "");
    let ops = op_checks();
    for (k, (name, check)) in ops.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5EED + k as u64);
        for _ in 0..GRAD_INSTANCES {
            let err = check(&mut rng)?;
            passed &= err < 1e-4;
            if err > worst_overall.0 {
                worst_overall = (err, name);
            }
        }
    }
    let mut composed_worst: f64 = 0.0;
    for seed in 0..GRAD_INSTANCES {
        let err = composed_instance(seed)?;
        passed &= err < 1e-4;
        composed_worst = composed_worst.max(err);
    }
    Ok(Verdict::new(
        passed,
        format!(
            "{} ops x {GRAD_INSTANCES} instances, worst op error {:.1e} ({}); composed loss x {GRAD_INSTANCES}, worst {:.1e}",
            ops.len(),
            worst_overall.0,
            worst_overall.1,
            composed_worst
        ),
    ))
}

fn desk_config(c: usize, out: &Path) -> Result<RunConfig> {
    let text = format!(
        "f = 16\nc = {c}\nbatch = 50\nbeta = 0.5\nepochs = 200\n\
         clusters = 4\ndim = 16\nper_cluster = 250\nspread = 0.15\n\
         holdout = 0\ngmm_grid = 10\nmc_samples = 1000\n"
    );
    let out = KvEntry::new("output_dir", out.display().to_string(), "acceptance");
    RunConfig::from_sources(&text, "acceptance", &[out])
}

fn desk_run(c: usize) -> Result<(RunReport, tempfile::TempDir)> {
    let dir = tempfile::tempdir().map_err(|e| cplearn::Error::io(std::env::temp_dir(), e))?;
    let cfg = desk_config(c, dir.path())?;
    Ok((run_train(&cfg)?, dir))
}

const DESK_SIZES: [usize; 3] = [4, 16, 128];

fn criterion_6(shared: &mut Shared) -> Result<Verdict> {
    for c in DESK_SIZES {
        let (report, dir) = desk_run(c)?;
        shared.desk_runs.push((c, report, dir));
    }

    let mut nmi = Vec::new();
    let mut cov = Vec::new();
    let mut ranks = Vec::new();
    let mut probes = Vec::new();
    let mut bound_ok = true;
    for (c, r, dir) in &shared.desk_runs {
        let collapse = r.collapse.as_ref().expect("diagnostics enabled");
        nmi.push((*c, r.nmi.unwrap_or(f64::NAN)));
        cov.push(collapse.covariance_residual);
        ranks.push(collapse.representation_rank);
        probes.push(r.probe_accuracy.unwrap_or(f64::NAN));
        bound_ok &= r.epochs.iter().all(|e| e.total >= e.lower_bound - 1e-9);
        bound_ok &= metrics_respect_bound(&dir.path().join(METRICS_FILE))?;
    }
    let nmi_ok = nmi.iter().filter(|(c, _)| *c >= 16).all(|(_, v)| *v >= 0.8);
    let cov_ok = cov.windows(2).all(|w| w[1] < w[0]);
    let rank_ok = ranks.iter().all(|&k| k == 16);
    let probe_ok = probes.iter().all(|&a| a >= 0.95);
    let flag = |b: bool| if b { "ok" } else { "FAIL" };
    Ok(Verdict::new(
        nmi_ok && cov_ok && rank_ok && probe_ok && bound_ok,
        format!(
            "(a) NMI {} {:?}; (b) cov residual {} {:?}; (c) rank {} {:?}; (d) probe {} {:?}; (e) loss >= bound {}",
            flag(nmi_ok),
            nmi.iter().map(|(c, v)| format!("c={c}:{v:.3}")).collect::<Vec<_>>(),
            flag(cov_ok),
            cov.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>(),
            flag(rank_ok),
            ranks,
            flag(probe_ok),
            probes.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>(),
            flag(bound_ok),
        ),
    ))
}

fn metrics_respect_bound(path: &Path) -> Result<bool> {
    let text = std::fs::read_to_string(path).map_err(|e| cplearn::Error::io(path, e))?;
    Ok(text.lines().skip(1).all(|line| {
        let cols: Vec<f64> = line.split(',').filter_map(|v| v.parse().ok()).collect();
        cols.len() == 5 && cols[3] >= cols[4] - 1e-9
    }))
}

fn desk_invariants(shared: &mut Shared) -> Result<Verdict> {
    if shared.desk_runs.is_empty() {
        return Ok(Verdict::new(false, "desk runs unavailable"));
    }
    let mut passed = true;
    let mut notes = Vec::new();
    for (c, r, _) in &shared.desk_runs {
        let bounded = r.max_feature_abs_mean < 10.0 && r.max_feature_std < 10.0;
        let totals: Vec<f64> = r.epochs.iter().map(|e| e.total).collect();
        let violations: Vec<(usize, f64)> = (0..totals.len().saturating_sub(5))
            .filter(|&e| totals[e] < totals[e + 5] - 0.05)
            .map(|e| (e + 1, totals[e + 5] - totals[e]))
            .collect();
        passed &= bounded && violations.is_empty();
        let worst = violations.iter().map(|v| v.1).fold(0.0, f64::max);
        notes.push(format!(
            "c={c}: max |mean| {:.2}, max std {:.2}, trend violations {} (worst rise {worst:.3})",
            r.max_feature_abs_mean,
            r.max_feature_std,
            violations.len()
        ));
    }
    Ok(Verdict::new(passed, notes.join("; ")))
}

fn criterion_7(_: &mut Shared) -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = f64::INFINITY;
    let mut cases = 0;
    for beta in [0.1, 1.0, 10.0] {
        for case in 0..10_000 {
            let c = rng.random_range(2..9);
            if case % 10 == 0 {
                let n = c * rng.random_range(1..4);
                let a = ProbMatrix::new(Tensor::from_fn(n, c, |i, j| (i % c == j) as u8 as f64))?;
                let prior = Prior::uniform(c);
                let l = loss::total_loss(&a, &a, &prior, beta, 1e-8, LossVariant::ForwardCe)?;
                worst = worst.min(l.total - prior.entropy());
                cases += 1;
                continue;
            }
            let n = rng.random_range(1..9);
            let sharpen = rng.random_range(0.5..20.0);
            let mut a = stochastic(&mut rng, n, c).map(|v| v.powf(sharpen));
            for i in 0..n {
                let s: f64 = a.row(i).iter().sum();
                if s > 0.0 {
                    a.row_mut(i).iter_mut().for_each(|v| *v /= s);
                } else {
                    a.row_mut(i).iter_mut().for_each(|v| *v = 1.0 / c as f64);
                }
            }
            let b = stochastic(&mut rng, n, c);
            let p = ProbMatrix::new(a)?;
            let pp = ProbMatrix::new(b)?;
            let prior = Prior::uniform(c);
            let l = loss::total_loss(&p, &pp, &prior, beta, 1e-8, LossVariant::ForwardCe)?;
            worst = worst.min(l.total - prior.entropy());
            cases += 1;
        }
    }
    Ok(Verdict::new(
        worst >= -1e-9,
        format!("{cases} pairs, min(total - H(q)) = {worst:.3e}"),
    ))
}

fn criterion_8(_: &mut Shared) -> Result<Verdict> {
    let p = ProbMatrix::from_rows(&[[0.7, 0.3, 0.0], [0.2, 0.8, 0.0], [0.5, 0.5, 0.0]])?;
    let prior = Prior::uniform(3);
    let rev = loss::total_loss(&p, &p, &prior, 1.0, 1e-8, LossVariant::ReverseKl)?;
    let fwd = loss::total_loss(&p, &p, &prior, 1.0, 1e-8, LossVariant::ForwardCe)?;
    let fwd_flagged = fwd.prior_floored || fwd.prior_matching.is_infinite();
    let rev_ok = rev.total.is_finite() && rev.prior_matching.is_finite();
    let bound = lower_bound(&prior, 1.0, 1e-8, LossVariant::ReverseKl);
    Ok(Verdict::new(
        rev_ok && fwd_flagged,
        format!(
            "reverse KL prior term {:.4} (finite, bound {bound:.2e}); forward CE prior term {:.2} floored={}",
            rev.prior_matching, fwd.prior_matching, fwd.prior_floored
        ),
    ))
}

fn criterion_9(_: &mut Shared) -> Result<Verdict> {
    let (a, da) = desk_run(16)?;
    let (b, db) = desk_run(16)?;
    let read = |dir: &Path, name: &str| -> Result<Vec<u8>> {
        let p = dir.join(name);
        std::fs::read(&p).map_err(|e| cplearn::Error::io(p, e))
    };
    let metrics_same = read(da.path(), METRICS_FILE)? == read(db.path(), METRICS_FILE)?;
    let ckpt_same = read(da.path(), CHECKPOINT_FILE)? == read(db.path(), CHECKPOINT_FILE)?;
    let epochs_same = a.epochs == b.epochs;
    Ok(Verdict::new(
        metrics_same && ckpt_same && epochs_same,
        format!("metrics.csv identical {metrics_same}; checkpoint.bin identical {ckpt_same}"),
    ))
}
