//! Bias-corrected Adam.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// First/second moment accumulators for an ordered list of parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let (m, v): (Vec<_>, Vec<_>) = params
            .into_iter()
            .map(|p| (Tensor::zeros(p.rows(), p.cols()), Tensor::zeros(p.rows(), p.cols())))
            .unzip();
        AdamState {
            m,
            v,
            t: 0,
            beta1: BETA1,
            beta2: BETA2,
            eps: EPS,
        }
    }

    /// One update of every parameter, in the order the state was built with.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::param(
                "adam",
                format!(
                    "state tracks {} tensors, got {} params and {} grads",
                    self.m.len(),
                    params.len(),
                    grads.len()
                ),
            ));
        }
        self.t += 1;
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            adam_update(
                p,
                g,
                &mut self.m[k],
                &mut self.v[k],
                self.t,
                lr,
                (self.beta1, self.beta2, self.eps),
            )?;
        }
        Ok(())
    }
}

/// Updates one parameter in place; `t` is the 1-based step count.
pub fn adam_update(
    param: &mut Tensor,
    grad: &Tensor,
    m: &mut Tensor,
    v: &mut Tensor,
    t: u64,
    lr: f64,
    (beta1, beta2, eps): (f64, f64, f64),
) -> Result<()> {
    param.same_shape(grad, "adam_update")?;
    param.same_shape(m, "adam_update")?;
    param.same_shape(v, "adam_update")?;
    let c1 = 1.0 - beta1.powi(t as i32);
    let c2 = 1.0 - beta2.powi(t as i32);
    for (((p, &g), m), v) in param
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(m.data_mut())
        .zip(v.data_mut())
    {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}
