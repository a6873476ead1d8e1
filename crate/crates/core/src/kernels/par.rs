//! Rayon kernel driver: independent output rows distributed over the global
//! thread pool. Each row is computed by exactly the same worker as in
//! [`super::seq`], so results do not depend on thread count or scheduling.

use rayon::prelude::*;

use super::{
    conv_forward_sample, conv_grad_input_sample, conv_grad_weight_channel, dense_forward_row,
    dense_grad_input_row, dense_grad_weight_row, ConvDims,
};
use crate::layer::Activation;

/// Rows per task, sized so tiny rows don't drown in scheduling overhead.
#[inline]
fn min_rows(work_per_row: usize) -> usize {
    (4096 / work_per_row.max(1)).clamp(1, 64)
}

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
    let _ = batch;
    out.par_chunks_mut(out_dim)
        .with_min_len(min_rows(in_dim * out_dim))
        .enumerate()
        .for_each(|(n, out_row)| {
            dense_forward_row(&x[n * in_dim..(n + 1) * in_dim], weights, bias, act, out_row);
        });
}

pub fn dense_grad_weights(
    dz: &[f64],
    x: &[f64],
    batch: usize,
    out_dim: usize,
    in_dim: usize,
    dw: &mut [f64],
) {
    dw.par_chunks_mut(in_dim)
        .with_min_len(min_rows(batch * in_dim))
        .enumerate()
        .for_each(|(o, dw_row)| {
            dense_grad_weight_row(o, dz, x, batch, out_dim, dw_row);
        });
}

pub fn dense_grad_input(
    dz: &[f64],
    weights: &[f64],
    batch: usize,
    out_dim: usize,
    in_dim: usize,
    dx: &mut [f64],
) {
    let _ = batch;
    dx.par_chunks_mut(in_dim)
        .with_min_len(min_rows(in_dim * out_dim))
        .enumerate()
        .for_each(|(n, dx_row)| {
            dense_grad_input_row(&dz[n * out_dim..(n + 1) * out_dim], weights, dx_row);
        });
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
    out.par_chunks_mut(d.out_sample())
        .with_min_len(min_rows(d.out_sample() * d.kernel_size()))
        .enumerate()
        .for_each(|(n, out_sample)| {
            conv_forward_sample(
                &x[n * in_sample..(n + 1) * in_sample],
                weights,
                bias,
                act,
                d,
                out_sample,
            );
        });
}

pub fn conv_grad_weights(dz: &[f64], x: &[f64], d: &ConvDims, dw: &mut [f64]) {
    dw.par_chunks_mut(d.kernel_size())
        .with_min_len(1)
        .enumerate()
        .for_each(|(oc, dw_oc)| {
            conv_grad_weight_channel(oc, dz, x, d, dw_oc);
        });
}

pub fn conv_grad_input(dz: &[f64], weights: &[f64], d: &ConvDims, dx: &mut [f64]) {
    let out_sample = d.out_sample();
    dx.par_chunks_mut(d.in_sample())
        .with_min_len(min_rows(d.out_sample() * d.kernel_size()))
        .enumerate()
        .for_each(|(n, dx_sample)| {
            conv_grad_input_sample(
                &dz[n * out_sample..(n + 1) * out_sample],
                weights,
                d,
                dx_sample,
            );
        });
}
