//! Sequential kernel driver: plain loops over output rows.

use super::{
    conv_forward_sample, conv_grad_input_sample, conv_grad_weight_channel, dense_forward_row,
    dense_grad_input_row, dense_grad_weight_row, ConvDims,
};
use crate::layer::Activation;

#[allow(clippy::too_many_arguments)]
pub fn dense_forward(
    x: &[f64],
    batch: usize,
    in_dim: usize,
    weights: &[f64],
    out_dim: usize,
    bias: &[f64],
    act: Activation,
    out: &mut [f64],
) {
    for (n, out_row) in out.chunks_mut(out_dim).enumerate() {
        dense_forward_row(&x[n * in_dim..(n + 1) * in_dim], weights, bias, act, out_row);
    }
    let _ = batch;
}

pub fn dense_grad_weights(
    dz: &[f64],
    x: &[f64],
    batch: usize,
    out_dim: usize,
    in_dim: usize,
    dw: &mut [f64],
) {
    for (o, dw_row) in dw.chunks_mut(in_dim).enumerate() {
        dense_grad_weight_row(o, dz, x, batch, out_dim, dw_row);
    }
}

pub fn dense_grad_input(
    dz: &[f64],
    weights: &[f64],
    batch: usize,
    out_dim: usize,
    in_dim: usize,
    dx: &mut [f64],
) {
    for (n, dx_row) in dx.chunks_mut(in_dim).enumerate() {
        dense_grad_input_row(&dz[n * out_dim..(n + 1) * out_dim], weights, dx_row);
    }
    let _ = batch;
}

pub fn conv_forward(
    x: &[f64],
    weights: &[f64],
    bias: &[f64],
    act: Activation,
    d: &ConvDims,
    out: &mut [f64],
) {
    let in_sample = d.in_sample();
    for (n, out_sample) in out.chunks_mut(d.out_sample()).enumerate() {
        conv_forward_sample(
            &x[n * in_sample..(n + 1) * in_sample],
            weights,
            bias,
            act,
            d,
            out_sample,
        );
    }
}

pub fn conv_grad_weights(dz: &[f64], x: &[f64], d: &ConvDims, dw: &mut [f64]) {
    for (oc, dw_oc) in dw.chunks_mut(d.kernel_size()).enumerate() {
        conv_grad_weight_channel(oc, dz, x, d, dw_oc);
    }
}

pub fn conv_grad_input(dz: &[f64], weights: &[f64], d: &ConvDims, dx: &mut [f64]) {
    let out_sample = d.out_sample();
    for (n, dx_sample) in dx.chunks_mut(d.in_sample()).enumerate() {
        conv_grad_input_sample(
            &dz[n * out_sample..(n + 1) * out_sample],
            weights,
            d,
            dx_sample,
        );
    }
}
