//! Central finite-difference verification of backpropagated gradients.
//!
//! This harness recomputes the loss through the forward pass only, so it is
//! independent of the backward implementation it checks.

use crate::error::Result;
use crate::loss::loss_softmax_ce;
use crate::network::Network;
use crate::tensor::Tensor;

/// Worst relative mismatch found on a batch, over all unmasked parameters.
#[derive(Clone, Copy, Debug, Default)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checked: usize,
    pub masked_nonzero: usize,
}

/// Central difference `(L(w+h) - L(w-h)) / 2h` for every weight and bias,
/// compared against `backward`'s cached gradients.
///
/// Masked weights are not perturbed (their stored value participates in the
/// forward pass, so a perturbation would measure a gradient the engine
/// intentionally zeroes); they are instead counted in `masked_nonzero` if
/// the analytic gradient is not exactly zero.
pub fn check_gradients(
    net: &mut Network,
    input: &Tensor,
    labels: &[usize],
    step: f64,
) -> Result<GradCheckReport> {
    net.backward(input, labels)?;
    let analytic_w: Vec<Vec<f64>> = (0..net.layer_count())
        .map(|l| net.weight_grad(l).data().to_vec())
        .collect();
    let analytic_b: Vec<Vec<f64>> = (0..net.layer_count())
        .map(|l| net.bias_grad(l).data().to_vec())
        .collect();

    let mut report = GradCheckReport::default();
    for l in 0..net.layer_count() {
        let mask: Vec<f64> = net.mask(l).data().to_vec();
        for i in 0..analytic_w[l].len() {
            if mask[i] == 0.0 {
                if analytic_w[l][i] != 0.0 {
                    report.masked_nonzero += 1;
                }
                continue;
            }
            let orig = net.weight_value(l, i);
            net.set_weight_value(l, i, orig + step);
            let up = eval_loss(net, input, labels)?;
            net.set_weight_value(l, i, orig - step);
            let down = eval_loss(net, input, labels)?;
            net.set_weight_value(l, i, orig);
            record(&mut report, analytic_w[l][i], (up - down) / (2.0 * step));
        }
        for i in 0..analytic_b[l].len() {
            let orig = net.bias_value(l, i);
            net.set_bias_value(l, i, orig + step);
            let up = eval_loss(net, input, labels)?;
            net.set_bias_value(l, i, orig - step);
            let down = eval_loss(net, input, labels)?;
            net.set_bias_value(l, i, orig);
            record(&mut report, analytic_b[l][i], (up - down) / (2.0 * step));
        }
    }
    Ok(report)
}

fn eval_loss(net: &mut Network, input: &Tensor, labels: &[usize]) -> Result<f64> {
    let logits = net.forward(input)?;
    loss_softmax_ce(&logits, labels)
}

fn record(report: &mut GradCheckReport, analytic: f64, numeric: f64) {
    let diff = (analytic - numeric).abs();
    // absolute floor for near-zero gradients where the central difference
    // is dominated by f64 cancellation noise
    let rel = if diff <= 1e-10 {
        0.0
    } else {
        diff / analytic.abs().max(numeric.abs())
    };
    if rel > report.max_relative_error {
        report.max_relative_error = rel;
    }
    report.checked += 1;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layer::{Activation, LayerSpec};
    use crate::network::build_network;

    #[test]
    fn dense_relu_network_passes_gradcheck() {
        let specs = vec![
            LayerSpec::dense(4, 5, Activation::Relu),
            LayerSpec::dense(5, 3, Activation::Identity),
        ];
        let mut net = build_network(&specs, 42).unwrap();
        let input = Tensor::new(
            vec![3, 4],
            vec![0.3, -0.7, 0.2, 1.1, -0.5, 0.9, 0.4, -0.1, 0.6, 0.6, -1.2, 0.8],
        )
        .unwrap();
        let report = check_gradients(&mut net, &input, &[0, 2, 1], 1e-6).unwrap();
        assert!(report.checked > 0);
        assert_eq!(report.masked_nonzero, 0);
        assert!(
            report.max_relative_error <= 1e-6,
            "relative error {}",
            report.max_relative_error
        );
    }

    #[test]
    fn conv_network_passes_gradcheck() {
        let specs = vec![
            LayerSpec::conv2d(1, 2, 3, 3, Activation::Relu),
            LayerSpec::dense(2 * 3 * 3, 2, Activation::Identity),
        ];
        let mut net = build_network(&specs, 7).unwrap();
        let data: Vec<f64> = (0..2 * 25).map(|i| ((i * 37 % 17) as f64) / 8.0 - 1.0).collect();
        let input = Tensor::new(vec![2, 1, 5, 5], data).unwrap();
        let report = check_gradients(&mut net, &input, &[1, 0], 1e-6).unwrap();
        assert!(
            report.max_relative_error <= 1e-6,
            "relative error {}",
            report.max_relative_error
        );
    }

    #[test]
    fn masked_entries_report_zero_gradient() {
        let specs = vec![
            LayerSpec::dense(3, 3, Activation::Relu),
            LayerSpec::dense(3, 2, Activation::Identity),
        ];
        let mut net = build_network(&specs, 5).unwrap();
        let mut mask = Tensor::filled(vec![3, 3], 1.0);
        for i in [0, 4, 7] {
            mask.data_mut()[i] = 0.0;
        }
        net.set_mask(0, mask).unwrap();
        let input = Tensor::new(vec![2, 3], vec![0.5, -0.5, 1.0, -1.0, 0.25, 0.75]).unwrap();
        let report = check_gradients(&mut net, &input, &[0, 1], 1e-6).unwrap();
        assert_eq!(report.masked_nonzero, 0);
        assert!(report.max_relative_error <= 1e-6);
    }
}
