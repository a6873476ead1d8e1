//! Softmax cross-entropy head.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn check_inputs(logits: &Tensor, labels: &[usize]) -> Result<usize> {
    if logits.shape().len() != 2 {
        return Err(Error::input(format!(
            "logits must be [batch, classes], got shape {:?}",
            logits.shape()
        )));
    }
    let classes = logits.shape()[1];
    if logits.rows() != labels.len() {
        return Err(Error::input(format!(
            "{} logit rows but {} labels",
            logits.rows(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::input(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    Ok(classes)
}

/// Mean cross-entropy after softmax, computed with the log-sum-exp shift.
pub fn loss_softmax_ce(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let classes = check_inputs(logits, labels)?;
    let mut total = 0.0;
    for (n, &label) in labels.iter().enumerate() {
        let row = logits.row(n);
        total += row_lse(row) - row[label];
        let _ = classes;
    }
    Ok(total / labels.len() as f64)
}

/// Mean loss plus its gradient with respect to the logits,
/// `(softmax(z) - onehot(y)) / batch`.
pub fn loss_softmax_ce_with_grad(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let classes = check_inputs(logits, labels)?;
    let batch = labels.len();
    let inv = 1.0 / batch as f64;
    let mut grad = Tensor::zeros(vec![batch, classes]);
    let mut total = 0.0;
    for (n, &label) in labels.iter().enumerate() {
        let row = logits.row(n);
        let lse = row_lse(row);
        total += lse - row[label];
        let g = grad.row_mut(n);
        for (c, &z) in row.iter().enumerate() {
            g[c] = (z - lse).exp() * inv;
        }
        g[label] -= inv;
    }
    Ok((total * inv, grad))
}

#[inline]
fn row_lse(row: &[f64]) -> f64 {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_k() {
        let logits = Tensor::zeros(vec![3, 10]);
        let loss = loss_softmax_ce(&logits, &[0, 5, 9]).unwrap();
        assert!((loss - (10.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_logits_give_near_zero() {
        let mut logits = Tensor::zeros(vec![1, 2]);
        logits.data_mut()[0] = 50.0;
        let loss = loss_softmax_ce(&logits, &[0]).unwrap();
        assert!(loss < 1e-9, "loss {loss} not below 1e-9");
    }

    #[test]
    fn two_class_example() {
        let logits = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let loss = loss_softmax_ce(&logits, &[0]).unwrap();
        assert!((loss - 1.3132616875182228).abs() < 1e-12);
    }

    #[test]
    fn label_out_of_range_is_input_error() {
        let logits = Tensor::zeros(vec![1, 2]);
        assert!(loss_softmax_ce(&logits, &[2]).is_err());
    }

    #[test]
    fn gradient_sums_to_zero_per_row() {
        let logits = Tensor::new(vec![2, 3], vec![0.3, -1.0, 2.0, 0.0, 0.0, 0.0]).unwrap();
        let (_, grad) = loss_softmax_ce_with_grad(&logits, &[2, 0]).unwrap();
        for n in 0..2 {
            let s: f64 = grad.row(n).iter().sum();
            assert!(s.abs() < 1e-15);
        }
    }
}
