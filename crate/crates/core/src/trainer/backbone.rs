//! MLP backbone `g: R^d -> R^f`.

use rand::Rng as _;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const LEAKY_SLOPE: f64 = 0.2;

/// Fully connected layers with leaky-ReLU between them and a linear output.
#[derive(Clone, Debug, PartialEq)]
pub struct Backbone {
    pub widths: Vec<usize>,
    pub weights: Vec<Tensor>,
    pub biases: Vec<Tensor>,
}

impl Backbone {
    /// `widths = [d, hidden.., f]`. Weights and biases are uniform in
    /// `+-1/sqrt(fan_in)`.
    pub fn init(widths: &[usize], rng: &mut Rng) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::param(
                "widths",
                format!("need at least input and output width, all > 0, got {widths:?}"),
            ));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in widths.windows(2) {
            let bound = 1.0 / (pair[0] as f64).sqrt();
            weights.push(Tensor::from_fn(pair[0], pair[1], |_, _| {
                rng.random_range(-bound..bound)
            }));
            biases.push(Tensor::from_fn(1, pair[1], |_, _| rng.random_range(-bound..bound)));
        }
        Ok(Backbone {
            widths: widths.to_vec(),
            weights,
            biases,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().chain(&self.biases).map(Tensor::len).sum()
    }

    /// Weights then biases, layer by layer.
    pub fn tensors(&self) -> Vec<&Tensor> {
        self.weights.iter().zip(&self.biases).flat_map(|(w, b)| [w, b]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    pub fn on_tape<'t>(&self, tape: &'t Tape) -> BackboneVars<'t> {
        BackboneVars {
            weights: self.weights.iter().map(|w| tape.param(w.clone())).collect(),
            biases: self.biases.iter().map(|b| tape.param(b.clone())).collect(),
        }
    }

    /// Forward pass without gradients.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut z = x.clone();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            z = z.matmul(w)?;
            for row in 0..z.rows() {
                for (v, bias) in z.row_mut(row).iter_mut().zip(b.data()) {
                    *v += bias;
                }
            }
            if l + 1 < self.weights.len() {
                z = z.map(|v| if v > 0.0 { v } else { LEAKY_SLOPE * v });
            }
        }
        Ok(z)
    }
}

/// Backbone parameters recorded on a tape.
#[derive(Clone, Debug)]
pub struct BackboneVars<'t> {
    pub weights: Vec<Var<'t>>,
    pub biases: Vec<Var<'t>>,
}

impl<'t> BackboneVars<'t> {
    pub fn vars(&self) -> Vec<Var<'t>> {
        self.weights.iter().zip(&self.biases).flat_map(|(w, b)| [*w, *b]).collect()
    }

    pub fn forward(&self, x: Var<'t>) -> Result<Var<'t>> {
        let mut z = x;
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            z = z.matmul(*w)?.add_row(*b)?;
            if l < last {
                z = z.leaky_relu(LEAKY_SLOPE);
            }
        }
        Ok(z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use crate::rng;

    #[test]
    fn shapes_and_param_count() {
        let b = Backbone::init(&[16, 64, 64, 16], &mut rng::from_seed(0)).unwrap();
        assert_eq!(b.output_dim(), 16);
        assert_eq!(b.param_count(), 16 * 64 + 64 + 64 * 64 + 64 + 64 * 16 + 16);
        let z = b.forward(&Tensor::zeros(5, 16)).unwrap();
        assert_eq!(z.shape(), (5, 16));
        assert!(Backbone::init(&[4], &mut rng::from_seed(0)).is_err());
    }

    #[test]
    fn tape_and_plain_forward_agree() {
        let b = Backbone::init(&[3, 5, 2], &mut rng::from_seed(1)).unwrap();
        let x = Tensor::from_fn(4, 3, |i, j| (i as f64 - 1.5) * (j as f64 + 0.3));
        let tape = Tape::new();
        let vars = b.on_tape(&tape);
        let y = vars.forward(tape.constant(x.clone())).unwrap();
        assert!(y.value().max_abs_diff(&b.forward(&x).unwrap()).unwrap() < 1e-14);
    }

    #[test]
    fn leaky_slope_on_negative_inputs() {
        let b = Backbone {
            widths: vec![1, 1, 1],
            weights: vec![Tensor::scalar(1.0), Tensor::scalar(1.0)],
            biases: vec![Tensor::scalar(0.0), Tensor::scalar(0.0)],
        };
        let z = b.forward(&Tensor::from_rows(&[[-2.0], [3.0]]).unwrap()).unwrap();
        assert_eq!(z.data(), &[-0.4, 3.0]);
    }

    #[test]
    fn gradient_through_first_layer() {
        let b = Backbone::init(&[3, 6, 2], &mut rng::from_seed(2)).unwrap();
        let x = Tensor::from_fn(5, 3, |i, j| ((i * 3 + j) as f64 * 0.37).sin());
        let w0 = b.weights[0].clone();
        let err = grad_check(
            |tape, w| {
                let mut vars = b.on_tape(tape);
                vars.weights[0] = w;
                let z = vars.forward(tape.constant(x.clone()))?;
                Ok(z.mul(z)?.sum())
            },
            &w0,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
