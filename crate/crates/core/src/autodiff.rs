//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation applied to its [`Var`] handles. Leaves
//! created with [`Tape::param`] require gradients, leaves created with
//! [`Tape::constant`] do not. A single call to [`Tape::backward`] replays the
//! record in reverse and returns a [`Gradients`] table; the tape refuses a
//! second backward pass.

use std::cell::{Cell, Ref, RefCell};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Floor applied inside every logarithm of a probability.
pub const LOG_FLOOR: f64 = 1e-30;

/// Floor on row norms in [`Var::l2norm_rows`].
pub const NORM_FLOOR: f64 = 1e-12;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    AddRow(usize, usize),
    Add(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Sum(usize),
    Tanh(usize),
    LeakyRelu(usize, f64),
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    L2NormRows {
        x: usize,
        scale: f64,
        norms: Vec<f64>,
    },
    SoftmaxRows {
        x: usize,
        tau: f64,
    },
    CrossEntropyRows {
        target: usize,
        pred: usize,
    },
    PriorCrossEntropy {
        p: usize,
        prior: Vec<f64>,
    },
    ReverseKl {
        p: usize,
        prior: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of a forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    consumed: Cell<bool>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

/// Gradients produced by one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    /// Gradient of `var`, or zeros if nothing flowed into it.
    pub fn wrt(&self, var: Var<'_>) -> Tensor {
        self.get(var).cloned().unwrap_or_else(|| {
            let (r, c) = self.shapes[var.id];
            Tensor::zeros(r, c)
        })
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn requires(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    /// Back-propagates from the scalar `loss`. May be called once per tape.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        if self.consumed.replace(true) {
            return Err(Error::TapeConsumed);
        }
        let nodes = self.nodes.borrow();
        let (r, c) = nodes[loss.id].value.shape();
        if (r, c) != (1, 1) {
            return Err(Error::NotScalar(r, c));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[loss.id] = Some(Tensor::scalar(1.0));

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if node.requires_grad {
                for (input, contrib) in backward_rule(&nodes, node, &g)? {
                    if !nodes[input].requires_grad {
                        continue;
                    }
                    match &mut grads[input] {
                        Some(acc) => acc.add_assign(&contrib)?,
                        slot @ None => *slot = Some(contrib),
                    }
                }
            }
            grads[id] = Some(g);
        }
        let shapes = nodes.iter().map(|n| n.value.shape()).collect();
        let grads = grads
            .into_iter()
            .zip(nodes.iter())
            .map(|(g, n)| if n.requires_grad { g } else { None })
            .collect();
        Ok(Gradients { grads, shapes })
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Ref<'t, Tensor> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value().shape()
    }

    /// Scalar value of a 1x1 node.
    pub fn item(&self) -> f64 {
        self.value().get(0, 0)
    }

    fn unary(&self, value: Tensor, op: Op) -> Var<'t> {
        let rg = self.tape.requires(&[self.id]);
        self.tape.push(value, op, rg)
    }

    fn binary(&self, other: Var<'t>, value: Tensor, op: Op) -> Var<'t> {
        let rg = self.tape.requires(&[self.id, other.id]);
        self.tape.push(value, op, rg)
    }

    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>> {
        let out = self.value().matmul(&other.value())?;
        Ok(self.binary(other, out, Op::MatMul(self.id, other.id)))
    }

    /// Adds a `1 x cols` row vector to every row.
    pub fn add_row(&self, bias: Var<'t>) -> Result<Var<'t>> {
        let out = {
            let x = self.value();
            let b = bias.value();
            if b.rows() != 1 || b.cols() != x.cols() {
                return Err(Error::Shape {
                    op: "add_row",
                    left: x.shape(),
                    right: b.shape(),
                });
            }
            let mut out = x.clone();
            for i in 0..out.rows() {
                for (o, &bv) in out.row_mut(i).iter_mut().zip(b.data()) {
                    *o += bv;
                }
            }
            out
        };
        Ok(self.binary(bias, out, Op::AddRow(self.id, bias.id)))
    }

    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        let out = self.value().zip_map(&other.value(), |a, b| a + b)?;
        Ok(self.binary(other, out, Op::Add(self.id, other.id)))
    }

    /// Elementwise product.
    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        let out = self.value().zip_map(&other.value(), |a, b| a * b)?;
        Ok(self.binary(other, out, Op::Mul(self.id, other.id)))
    }

    pub fn scale(&self, k: f64) -> Var<'t> {
        let out = self.value().scale(k);
        self.unary(out, Op::Scale(self.id, k))
    }

    /// Sum of all entries as a 1x1 node.
    pub fn sum(&self) -> Var<'t> {
        let out = Tensor::scalar(self.value().sum());
        self.unary(out, Op::Sum(self.id))
    }

    pub fn tanh(&self) -> Var<'t> {
        let out = self.value().map(f64::tanh);
        self.unary(out, Op::Tanh(self.id))
    }

    pub fn leaky_relu(&self, slope: f64) -> Var<'t> {
        let out = self.value().map(|v| if v > 0.0 { v } else { slope * v });
        self.unary(out, Op::LeakyRelu(self.id, slope))
    }

    /// Training-mode batch normalization with biased batch variance.
    pub fn batchnorm(&self, gamma: Var<'t>, beta: Var<'t>, eps_bn: f64) -> Result<Var<'t>> {
        let (out, xhat, inv_std) = {
            let x = self.value();
            let g = gamma.value();
            let b = beta.value();
            let (n, f) = x.shape();
            if n < 2 {
                return Err(Error::DegenerateBatch(format!(
                    "batch norm needs at least 2 rows, got {n}"
                )));
            }
            for p in [&*g, &*b] {
                if p.shape() != (1, f) {
                    return Err(Error::Shape {
                        op: "batchnorm",
                        left: x.shape(),
                        right: p.shape(),
                    });
                }
            }
            let mean = x.column_means();
            let mut var = vec![0.0; f];
            for row in x.iter_rows() {
                for j in 0..f {
                    let d = row[j] - mean[j];
                    var[j] += d * d;
                }
            }
            let inv_std: Vec<f64> = var
                .iter()
                .map(|v| 1.0 / (v / n as f64 + eps_bn).sqrt())
                .collect();
            let xhat = Tensor::from_fn(n, f, |i, j| (x.get(i, j) - mean[j]) * inv_std[j]);
            let out = Tensor::from_fn(n, f, |i, j| {
                g.data()[j] * xhat.get(i, j) + b.data()[j]
            });
            (out, xhat, inv_std)
        };
        let rg = self.tape.requires(&[self.id, gamma.id, beta.id]);
        Ok(self.tape.push(
            out,
            Op::BatchNorm {
                x: self.id,
                gamma: gamma.id,
                beta: beta.id,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Rescales every row to Euclidean norm `scale`.
    pub fn l2norm_rows(&self, scale: f64) -> Var<'t> {
        let (out, norms) = {
            let x = self.value();
            let norms = x.row_norms();
            let out = Tensor::from_fn(x.rows(), x.cols(), |i, j| {
                scale * x.get(i, j) / norms[i].max(NORM_FLOOR)
            });
            (out, norms)
        };
        self.unary(
            out,
            Op::L2NormRows {
                x: self.id,
                scale,
                norms,
            },
        )
    }

    /// Row-wise softmax of `x / tau`, max-subtracted.
    pub fn softmax_rows(&self, tau: f64) -> Result<Var<'t>> {
        let out = softmax_rows_value(&self.value(), tau)?;
        Ok(self.unary(out, Op::SoftmaxRows { x: self.id, tau }))
    }

    /// `-(1/n) sum_ij target_ij log pred_ij` with the log floored.
    pub fn cross_entropy_rows(&self, pred: Var<'t>) -> Result<Var<'t>> {
        let (value, _) = cross_entropy_rows_value(&self.value(), &pred.value())?;
        Ok(self.binary(
            pred,
            Tensor::scalar(value),
            Op::CrossEntropyRows {
                target: self.id,
                pred: pred.id,
            },
        ))
    }

    /// `-sum_j q_j log(column mean_j)` for a row-stochastic `self`.
    pub fn prior_cross_entropy(&self, prior: &[f64]) -> Result<Var<'t>> {
        let (value, _) = prior_cross_entropy_value(&self.value(), prior)?;
        Ok(self.unary(
            Tensor::scalar(value),
            Op::PriorCrossEntropy {
                p: self.id,
                prior: prior.to_vec(),
            },
        ))
    }

    /// `KL(column mean || q)` for a row-stochastic `self`.
    pub fn reverse_kl_prior(&self, prior: &[f64]) -> Result<Var<'t>> {
        let value = reverse_kl_value(&self.value(), prior)?;
        Ok(self.unary(
            Tensor::scalar(value),
            Op::ReverseKl {
                p: self.id,
                prior: prior.to_vec(),
            },
        ))
    }
}

pub(crate) fn softmax_rows_value(x: &Tensor, tau: f64) -> Result<Tensor> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::param("tau", format!("must be positive, got {tau}")));
    }
    let mut out = Tensor::zeros(x.rows(), x.cols());
    for i in 0..x.rows() {
        let row = x.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let o = out.row_mut(i);
        let mut total = 0.0;
        for (o, &v) in o.iter_mut().zip(row) {
            *o = ((v - max) / tau).exp();
            total += *o;
        }
        o.iter_mut().for_each(|v| *v /= total);
    }
    Ok(out)
}

/// Returns the value and whether any log argument hit [`LOG_FLOOR`].
pub(crate) fn cross_entropy_rows_value(target: &Tensor, pred: &Tensor) -> Result<(f64, bool)> {
    target.same_shape(pred, "cross_entropy_rows")?;
    let n = target.rows().max(1) as f64;
    let mut floored = false;
    let mut total = 0.0;
    for (&t, &p) in target.data().iter().zip(pred.data()) {
        if p < LOG_FLOOR {
            floored = true;
        }
        if t != 0.0 {
            total -= t * p.max(LOG_FLOOR).ln();
        }
    }
    Ok((total / n, floored))
}

fn check_prior(p: &Tensor, prior: &[f64]) -> Result<()> {
    if prior.len() != p.cols() {
        return Err(Error::Shape {
            op: "prior",
            left: p.shape(),
            right: (1, prior.len()),
        });
    }
    Ok(())
}

pub(crate) fn prior_cross_entropy_value(p: &Tensor, prior: &[f64]) -> Result<(f64, bool)> {
    check_prior(p, prior)?;
    let mut floored = false;
    let mut total = 0.0;
    for (&q, m) in prior.iter().zip(p.column_means()) {
        if m < LOG_FLOOR {
            floored = true;
        }
        if q != 0.0 {
            total -= q * m.max(LOG_FLOOR).ln();
        }
    }
    Ok((total, floored))
}

pub(crate) fn reverse_kl_value(p: &Tensor, prior: &[f64]) -> Result<f64> {
    check_prior(p, prior)?;
    let mut total = 0.0;
    for (&q, m) in prior.iter().zip(p.column_means()) {
        if m > 0.0 {
            total += m * (m.ln() - q.ln());
        }
    }
    Ok(total)
}

fn backward_rule(nodes: &[Node], node: &Node, g: &Tensor) -> Result<Vec<(usize, Tensor)>> {
    let val = |i: usize| &nodes[i].value;
    let out = match &node.op {
        Op::Leaf => vec![],
        Op::MatMul(a, b) => {
            let mut v = Vec::with_capacity(2);
            if nodes[*a].requires_grad {
                v.push((*a, g.matmul(&val(*b).transpose())?));
            }
            if nodes[*b].requires_grad {
                v.push((*b, val(*a).transpose().matmul(g)?));
            }
            v
        }
        Op::AddRow(x, b) => {
            let db = Tensor::from_vec(1, g.cols(), g.column_means())?.scale(g.rows() as f64);
            vec![(*x, g.clone()), (*b, db)]
        }
        Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
        Op::Mul(a, b) => vec![
            (*a, g.zip_map(val(*b), |g, y| g * y)?),
            (*b, g.zip_map(val(*a), |g, x| g * x)?),
        ],
        Op::Scale(x, k) => vec![(*x, g.scale(*k))],
        Op::Sum(x) => {
            let (r, c) = val(*x).shape();
            vec![(*x, Tensor::filled(r, c, g.get(0, 0)))]
        }
        Op::Tanh(x) => vec![(*x, g.zip_map(&node.value, |g, y| g * (1.0 - y * y))?)],
        Op::LeakyRelu(x, slope) => {
            vec![(*x, g.zip_map(val(*x), |g, v| if v > 0.0 { g } else { g * slope })?)]
        }
        Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
        } => {
            let (n, f) = xhat.shape();
            let gm = val(*gamma).data();
            let mut dgamma = vec![0.0; f];
            let mut dbeta = vec![0.0; f];
            let mut sum_dxhat = vec![0.0; f];
            let mut sum_dxhat_xhat = vec![0.0; f];
            for i in 0..n {
                for j in 0..f {
                    let gij = g.get(i, j);
                    let xh = xhat.get(i, j);
                    dgamma[j] += gij * xh;
                    dbeta[j] += gij;
                    let dxh = gij * gm[j];
                    sum_dxhat[j] += dxh;
                    sum_dxhat_xhat[j] += dxh * xh;
                }
            }
            let nf = n as f64;
            let dx = Tensor::from_fn(n, f, |i, j| {
                let dxh = g.get(i, j) * gm[j];
                inv_std[j] / nf * (nf * dxh - sum_dxhat[j] - xhat.get(i, j) * sum_dxhat_xhat[j])
            });
            vec![
                (*x, dx),
                (*gamma, Tensor::from_vec(1, f, dgamma)?),
                (*beta, Tensor::from_vec(1, f, dbeta)?),
            ]
        }
        Op::L2NormRows { x, scale, norms } => {
            let xv = val(*x);
            let mut dx = Tensor::zeros(xv.rows(), xv.cols());
            for i in 0..xv.rows() {
                let r = norms[i];
                let gi = g.row(i);
                let d = dx.row_mut(i);
                if r > NORM_FLOOR {
                    let u: Vec<f64> = xv.row(i).iter().map(|v| v / r).collect();
                    let ug: f64 = u.iter().zip(gi).map(|(a, b)| a * b).sum();
                    for ((d, &gk), &uk) in d.iter_mut().zip(gi).zip(&u) {
                        *d = scale / r * (gk - uk * ug);
                    }
                } else {
                    for (d, &gk) in d.iter_mut().zip(gi) {
                        *d = scale / NORM_FLOOR * gk;
                    }
                }
            }
            vec![(*x, dx)]
        }
        Op::SoftmaxRows { x, tau } => {
            let y = &node.value;
            let mut dx = Tensor::zeros(y.rows(), y.cols());
            for i in 0..y.rows() {
                let yi = y.row(i);
                let gi = g.row(i);
                let dot: f64 = yi.iter().zip(gi).map(|(a, b)| a * b).sum();
                for ((d, &yk), &gk) in dx.row_mut(i).iter_mut().zip(yi).zip(gi) {
                    *d = yk * (gk - dot) / tau;
                }
            }
            vec![(*x, dx)]
        }
        Op::CrossEntropyRows { target, pred } => {
            let s = g.get(0, 0) / val(*target).rows().max(1) as f64;
            let t = val(*target);
            let p = val(*pred);
            let dt = p.map(|p| -s * p.max(LOG_FLOOR).ln());
            let dp = t.zip_map(p, |t, p| if p > LOG_FLOOR { -s * t / p } else { 0.0 })?;
            vec![(*target, dt), (*pred, dp)]
        }
        Op::PriorCrossEntropy { p, prior } => {
            let pv = val(*p);
            let n = pv.rows().max(1) as f64;
            let means = pv.column_means();
            let s = g.get(0, 0) / n;
            let col: Vec<f64> = prior
                .iter()
                .zip(&means)
                .map(|(&q, &m)| if m > LOG_FLOOR { -s * q / m } else { 0.0 })
                .collect();
            vec![(*p, Tensor::from_fn(pv.rows(), pv.cols(), |_, j| col[j]))]
        }
        Op::ReverseKl { p, prior } => {
            let pv = val(*p);
            let n = pv.rows().max(1) as f64;
            let means = pv.column_means();
            let s = g.get(0, 0) / n;
            let col: Vec<f64> = prior
                .iter()
                .zip(&means)
                .map(|(&q, &m)| s * (m.max(LOG_FLOOR).ln() - q.max(LOG_FLOOR).ln() + 1.0))
                .collect();
            vec![(*p, Tensor::from_fn(pv.rows(), pv.cols(), |_, j| col[j]))]
        }
    };
    Ok(out)
}

/// Smallest denominator used by [`grad_check`].
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Worst componentwise relative error between the tape gradient of `func` at
/// `point` and central finite differences with the given `step`.
///
/// The denominator of each relative error is `max(|analytic|, |numeric|, GRAD_CHECK_FLOOR)`,
/// so components whose true gradient vanishes are held to an absolute error
/// of `tolerance * GRAD_CHECK_FLOOR` instead of being compared against
/// finite-difference rounding noise.
pub fn grad_check<F>(func: F, point: &Tensor, step: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    if !(1e-7..=1e-3).contains(&step) {
        return Err(Error::param("step", format!("{step} outside [1e-7, 1e-3]")));
    }
    let analytic = {
        let tape = Tape::new();
        let x = tape.param(point.clone());
        let y = func(&tape, x)?;
        if !y.item().is_finite() {
            return Err(Error::NonFinite("grad_check evaluation".into()));
        }
        tape.backward(y)?.wrt(x)
    };
    let eval = |p: Tensor| -> Result<f64> {
        let tape = Tape::new();
        let x = tape.constant(p);
        let y = func(&tape, x)?.item();
        if !y.is_finite() {
            return Err(Error::NonFinite("grad_check evaluation".into()));
        }
        Ok(y)
    };
    let mut worst: f64 = 0.0;
    for k in 0..point.len() {
        let mut plus = point.clone();
        plus.data_mut()[k] += step;
        let mut minus = point.clone();
        minus.data_mut()[k] -= step;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * step);
        let a = analytic.data()[k];
        let denom = a.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    /// Random-weighted sum, so reductions that are constant in `x`
    /// (e.g. the plain sum of a batch-normalized column) still carry signal.
    fn weighted<'t>(tape: &'t Tape, y: Var<'t>, seed: u64) -> Result<Var<'t>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (r, c) = y.shape();
        let w = tape.constant(random(&mut rng, r, c));
        Ok(y.mul(w)?.sum())
    }

    #[test]
    fn sum_of_squares_gradient() {
        let tape = Tape::new();
        let x = tape.param(Tensor::from_rows(&[[1.0, 2.0, 3.0]]).unwrap());
        let y = x.mul(x).unwrap().sum();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(x).data(), &[2.0, 4.0, 6.0]);
        let err = grad_check(
            |_, x| Ok(x.mul(x)?.sum()),
            &Tensor::from_rows(&[[1.0, 2.0, 3.0]]).unwrap(),
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let p = Tensor::from_rows(&[[0.3, -0.7]]).unwrap();
        let err = grad_check(|t, _| Ok(t.constant(Tensor::scalar(4.0))), &p, 1e-5).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn backward_is_single_use() {
        let tape = Tape::new();
        let x = tape.param(Tensor::scalar(2.0));
        let y = x.scale(3.0);
        tape.backward(y).unwrap();
        assert!(matches!(tape.backward(y), Err(Error::TapeConsumed)));
    }

    #[test]
    fn backward_requires_scalar() {
        let tape = Tape::new();
        let x = tape.param(Tensor::zeros(2, 2));
        assert!(matches!(tape.backward(x), Err(Error::NotScalar(2, 2))));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let tape = Tape::new();
        let a = tape.param(Tensor::scalar(2.0));
        let b = tape.constant(Tensor::scalar(5.0));
        let y = a.mul(b).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(a).get(0, 0), 5.0);
        assert!(g.get(b).is_none());
    }

    #[test]
    fn matmul_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = random(&mut rng, 4, 2);
        let a = random(&mut rng, 3, 4);
        let err = grad_check(
            |t, x| {
                let b = t.constant(b.clone());
                weighted(t, x.matmul(b)?, 9)
            },
            &a,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn batchnorm_fixed_point_and_constant_column() {
        let tape = Tape::new();
        // columns: [-1, 1, -1, 1] has mean 0, biased var 1
        let x = tape.constant(
            Tensor::from_rows(&[[-1.0, 3.0], [1.0, 3.0], [-1.0, 3.0], [1.0, 3.0]]).unwrap(),
        );
        let gamma = tape.constant(Tensor::filled(1, 2, 1.0));
        let beta = tape.constant(Tensor::zeros(1, 2));
        let y = x.batchnorm(gamma, beta, 0.0).unwrap();
        let y = y.value();
        for i in 0..4 {
            assert!((y.get(i, 0) - x.value().get(i, 0)).abs() < 1e-12);
        }
        let tape = Tape::new();
        let x = tape.constant(Tensor::filled(5, 1, 7.0));
        let y = x
            .batchnorm(
                tape.constant(Tensor::scalar(1.0)),
                tape.constant(Tensor::scalar(0.0)),
                1e-5,
            )
            .unwrap();
        assert!(y.value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batchnorm_rejects_single_row() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::zeros(1, 3));
        let g = tape.constant(Tensor::filled(1, 3, 1.0));
        let b = tape.constant(Tensor::zeros(1, 3));
        assert!(matches!(
            x.batchnorm(g, b, 1e-5),
            Err(Error::DegenerateBatch(_))
        ));
    }

    #[test]
    fn batchnorm_gradient_through_all_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x0 = random(&mut rng, 8, 4);
        let gamma0 = Tensor::from_fn(1, 4, |_, _| rng.random_range(0.5..1.5));
        let beta0 = random(&mut rng, 1, 4);
        let err_x = grad_check(
            |t, x| {
                let y = x.batchnorm(t.constant(gamma0.clone()), t.constant(beta0.clone()), 1e-5)?;
                weighted(t, y, 4)
            },
            &x0,
            1e-5,
        )
        .unwrap();
        assert!(err_x < 1e-4, "{err_x}");
        let err_g = grad_check(
            |t, g| {
                let y = t.constant(x0.clone()).batchnorm(g, t.constant(beta0.clone()), 1e-5)?;
                weighted(t, y, 4)
            },
            &gamma0,
            1e-5,
        )
        .unwrap();
        assert!(err_g < 1e-4, "{err_g}");
    }

    #[test]
    fn l2norm_examples() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[[3.0, 4.0]]).unwrap());
        let y = x.l2norm_rows(0.5).value().row(0).to_vec();
        assert!((y[0] - 0.3).abs() < 1e-15 && (y[1] - 0.4).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = tape.constant(random(&mut rng, 5, 8));
        let s = (8.0f64 / 5.0).sqrt();
        for norm in x.l2norm_rows(s).value().row_norms() {
            assert!((norm - s).abs() < 1e-12);
        }
    }

    #[test]
    fn l2norm_zero_row_is_finite() {
        let tape = Tape::new();
        let x = tape.param(Tensor::zeros(2, 3));
        let y = x.l2norm_rows(1.0);
        assert!(y.value().is_finite());
        let g = tape.backward(y.sum()).unwrap();
        assert!(g.wrt(x).is_finite());
    }

    #[test]
    fn tanh_origin_and_saturation() {
        let tape = Tape::new();
        let x = tape.param(Tensor::from_rows(&[[0.0, 50.0]]).unwrap());
        let y = x.tanh();
        assert_eq!(y.value().get(0, 0), 0.0);
        assert!((y.value().get(0, 1) - 1.0).abs() < 1e-12);
        let g = tape.backward(y.sum()).unwrap().wrt(x);
        assert_eq!(g.get(0, 0), 1.0);
        assert!(g.get(0, 1).abs() < 1e-12);
    }

    #[test]
    fn softmax_examples() {
        let x = Tensor::from_rows(&[[0.0, 0.0], [1.0, 2.0]]).unwrap();
        let y = softmax_rows_value(&x, 1.0).unwrap();
        assert_eq!(y.row(0), &[0.5, 0.5]);
        let shifted = softmax_rows_value(&x.map(|v| v + 123.0), 1.0).unwrap();
        assert!(y.max_abs_diff(&shifted).unwrap() < 1e-15);

        // Direct evaluation: e^k / (e + e^2 + e^3).
        let y = softmax_rows_value(&Tensor::from_rows(&[[1.0, 2.0, 3.0]]).unwrap(), 1.0).unwrap();
        for (got, want) in y.row(0).iter().zip([0.09003, 0.24473, 0.66524]) {
            assert!((got - want).abs() < 1e-5);
        }
        assert!(softmax_rows_value(&x, 0.0).is_err());
        assert!(softmax_rows_value(&x, -1.0).is_err());
    }

    #[test]
    fn softmax_large_inputs_stay_stochastic() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Tensor::from_fn(10, 7, |_, _| rng.random_range(-1e4..1e4));
        let y = softmax_rows_value(&x, 0.5).unwrap();
        for row in y.iter_rows() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_kernels_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let logits = random(&mut rng, 6, 4);
        let other = random(&mut rng, 6, 4);
        let prior = [0.1, 0.2, 0.3, 0.4];
        let ce = grad_check(
            |t, x| {
                let p = x.softmax_rows(0.7)?;
                let pp = t.constant(other.clone()).softmax_rows(0.7)?;
                p.cross_entropy_rows(pp)?.add(pp.cross_entropy_rows(p)?)
            },
            &logits,
            1e-5,
        )
        .unwrap();
        assert!(ce < 1e-6, "{ce}");
        let pr = grad_check(|_, x| x.softmax_rows(1.3)?.prior_cross_entropy(&prior), &logits, 1e-5)
            .unwrap();
        assert!(pr < 1e-6, "{pr}");
        let rk = grad_check(|_, x| x.softmax_rows(1.3)?.reverse_kl_prior(&prior), &logits, 1e-5)
            .unwrap();
        assert!(rk < 1e-6, "{rk}");
    }

    #[test]
    fn grad_check_rejects_bad_step() {
        let p = Tensor::scalar(1.0);
        assert!(grad_check(|_, x| Ok(x.sum()), &p, 1.0).is_err());
    }

    #[test]
    fn grad_check_non_finite_is_an_error() {
        let p = Tensor::scalar(1.0);
        let r = grad_check(|_, x| Ok(x.scale(f64::INFINITY).sum()), &p, 1e-5);
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }
}
