//! Linear evaluation on frozen representations.

use rand::seq::SliceRandom;

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;
use crate::trainer::adam::AdamState;

pub const PROBE_EPOCHS: usize = 100;
pub const PROBE_LR: f64 = 1e-2;
pub const PROBE_BATCH: usize = 64;
pub const HOLDOUT_FRACTION: f64 = 0.2;

/// Standardizes columns with statistics from `fit`.
fn standardize(fit: &Tensor, apply: &Tensor) -> Tensor {
    let means = fit.column_means();
    let n = fit.rows() as f64;
    let stds: Vec<f64> = (0..fit.cols())
        .map(|j| {
            let var = fit.iter_rows().map(|r| (r[j] - means[j]).powi(2)).sum::<f64>() / n;
            var.sqrt().max(1e-12)
        })
        .collect();
    Tensor::from_fn(apply.rows(), apply.cols(), |i, j| {
        (apply.get(i, j) - means[j]) / stds[j]
    })
}

fn one_hot(labels: &[usize], classes: usize) -> Tensor {
    Tensor::from_fn(labels.len(), classes, |i, k| (labels[i] == k) as u8 as f64)
}

/// Multinomial logistic regression trained with Adam on a seeded 80/20
/// split; returns accuracy on the held-out 20%.
pub fn linear_probe(
    representations: &Tensor,
    labels: &[usize],
    classes: usize,
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<f64> {
    let m = representations.rows();
    if labels.len() != m {
        return Err(Error::Data(format!("{} labels for {m} representations", labels.len())));
    }
    if classes < 2 || m < classes {
        return Err(Error::Data(format!(
            "linear probe needs at least `classes` samples and 2 classes, got m={m}, classes={classes}"
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::Data(format!("label {bad} outside 0..{classes}")));
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut rng::stream(seed, 0xB0));
    let n_test = ((m as f64 * HOLDOUT_FRACTION).round() as usize).clamp(1, m - 1);
    let (test_idx, train_idx) = order.split_at(n_test);

    let x_train_raw = representations.select_rows(train_idx);
    let x_train = standardize(&x_train_raw, &x_train_raw);
    let x_test = standardize(&x_train_raw, &representations.select_rows(test_idx));
    let y_train: Vec<usize> = train_idx.iter().map(|&i| labels[i]).collect();
    let y_test: Vec<usize> = test_idx.iter().map(|&i| labels[i]).collect();

    let f = representations.cols();
    let mut weight = Tensor::zeros(f, classes);
    let mut bias = Tensor::zeros(1, classes);
    let mut adam = AdamState::new([&weight, &bias]);
    let mut batch_rng = rng::stream(seed, 0xB1);
    let mut idx: Vec<usize> = (0..x_train.rows()).collect();
    for _ in 0..epochs {
        idx.shuffle(&mut batch_rng);
        for chunk in idx.chunks(PROBE_BATCH) {
            let tape = Tape::new();
            let w = tape.param(weight.clone());
            let b = tape.param(bias.clone());
            let x = tape.constant(x_train.select_rows(chunk));
            let ys: Vec<usize> = chunk.iter().map(|&i| y_train[i]).collect();
            let target = tape.constant(one_hot(&ys, classes));
            let p = x.matmul(w)?.add_row(b)?.softmax_rows(1.0)?;
            let loss = target.cross_entropy_rows(p)?;
            let grads = tape.backward(loss)?;
            let (gw, gb) = (grads.wrt(w), grads.wrt(b));
            adam.step(&mut [&mut weight, &mut bias], &[gw, gb], lr)?;
        }
    }
    let mut logits = x_test.matmul(&weight)?;
    for i in 0..logits.rows() {
        for (v, b) in logits.row_mut(i).iter_mut().zip(bias.data()) {
            *v += b;
        }
    }
    let correct = logits
        .row_argmax()
        .iter()
        .zip(&y_test)
        .filter(|(a, b)| a == b)
        .count();
    Ok(correct as f64 / y_test.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn blobs(per: usize, classes: usize, sep: f64, seed: u64) -> (Tensor, Vec<usize>) {
        let mut r = rng::from_seed(seed);
        let d = 4;
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for k in 0..classes {
            for _ in 0..per {
                rows.push(
                    (0..d)
                        .map(|j| {
                            let z: f64 = StandardNormal.sample(&mut r);
                            z + if j == k % d { sep } else { 0.0 }
                        })
                        .collect::<Vec<_>>(),
                );
                labels.push(k);
            }
        }
        (Tensor::from_rows(&rows).unwrap(), labels)
    }

    #[test]
    fn separable_blobs() {
        let (x, y) = blobs(100, 2, 10.0, 0);
        let acc = linear_probe(&x, &y, 2, 30, PROBE_LR, 1).unwrap();
        assert!(acc >= 0.99, "{acc}");
    }

    #[test]
    fn shuffled_labels_are_chance() {
        let k = 4;
        let (x, mut y) = blobs(250, k, 0.0, 3);
        y.shuffle(&mut rng::from_seed(4));
        let acc = linear_probe(&x, &y, k, 20, PROBE_LR, 5).unwrap();
        let m_test = 200.0;
        let p = 1.0 / k as f64;
        let sigma = (p * (1.0 - p) / m_test).sqrt();
        assert!((acc - p).abs() < 3.0 * sigma, "{acc}");
    }

    #[test]
    fn too_few_samples() {
        let x = Tensor::zeros(2, 3);
        assert!(matches!(linear_probe(&x, &[0, 1], 3, 1, 0.1, 0), Err(Error::Data(_))));
        assert!(linear_probe(&x, &[0, 5], 2, 1, 0.1, 0).is_err());
        assert!(linear_probe(&x, &[0], 2, 1, 0.1, 0).is_err());
    }

    #[test]
    fn deterministic() {
        let (x, y) = blobs(30, 3, 2.0, 7);
        assert_eq!(
            linear_probe(&x, &y, 3, 5, PROBE_LR, 2).unwrap(),
            linear_probe(&x, &y, 3, 5, PROBE_LR, 2).unwrap()
        );
    }
}
