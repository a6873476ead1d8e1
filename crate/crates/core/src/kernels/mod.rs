//! Low-level compute kernels for dense and convolutional layers.
//!
//! Two interchangeable drivers exist: [`seq`] runs plain loops, [`par`]
//! (feature `parallel`, on by default) distributes independent output rows
//! over rayon. Every output element is produced by exactly one task using a
//! summation tree fixed in source order, so the two drivers — and any rayon
//! thread count — produce bit-identical results. The crate-level functions
//! here dispatch to whichever driver the feature selection picked.

use crate::layer::Activation;

pub mod seq;

#[cfg(feature = "parallel")]
pub mod par;

/// Dot product with eight independent accumulators. The deterministic
/// reduction tree is part of the kernel contract: `seq` and `par` share it.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let mut acc = [0.0f64; 8];
    let chunks = n / 8;
    for c in 0..chunks {
        let a8 = &a[c * 8..c * 8 + 8];
        let b8 = &b[c * 8..c * 8 + 8];
        for j in 0..8 {
            acc[j] += a8[j] * b8[j];
        }
    }
    let mut tail = 0.0;
    for i in chunks * 8..n {
        tail += a[i] * b[i];
    }
    (((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]))) + tail
}

/// `y += alpha * x`, elementwise.
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x.iter()) {
        *yi += alpha * *xi;
    }
}

/// Geometry of one conv layer application (stride 1, valid padding).
#[derive(Clone, Copy, Debug)]
pub struct ConvDims {
    pub batch: usize,
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
}

impl ConvDims {
    #[inline]
    pub fn out_h(&self) -> usize {
        self.in_h - self.kernel_h + 1
    }
    #[inline]
    pub fn out_w(&self) -> usize {
        self.in_w - self.kernel_w + 1
    }
    #[inline]
    pub fn in_plane(&self) -> usize {
        self.in_h * self.in_w
    }
    #[inline]
    pub fn out_plane(&self) -> usize {
        self.out_h() * self.out_w()
    }
    #[inline]
    pub fn in_sample(&self) -> usize {
        self.in_channels * self.in_plane()
    }
    #[inline]
    pub fn out_sample(&self) -> usize {
        self.out_channels * self.out_plane()
    }
    #[inline]
    pub fn kernel_size(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }
}

// ---------------------------------------------------------------------------
// Per-row workers shared by both drivers.
// ---------------------------------------------------------------------------

#[inline]
pub(crate) fn dense_forward_row(
    x_row: &[f64],
    weights: &[f64],
    bias: &[f64],
    act: Activation,
    out_row: &mut [f64],
) {
    let in_dim = x_row.len();
    for (o, out) in out_row.iter_mut().enumerate() {
        let w_row = &weights[o * in_dim..(o + 1) * in_dim];
        *out = act.apply(dot(w_row, x_row) + bias[o]);
    }
}

/// Gradient of one weight row: `dw_row[i] = sum_n dz[n][o] * x[n][i]`.
#[inline]
pub(crate) fn dense_grad_weight_row(
    o: usize,
    dz: &[f64],
    x: &[f64],
    batch: usize,
    out_dim: usize,
    dw_row: &mut [f64],
) {
    let in_dim = dw_row.len();
    dw_row.fill(0.0);
    for n in 0..batch {
        let g = dz[n * out_dim + o];
        if g != 0.0 {
            axpy(g, &x[n * in_dim..(n + 1) * in_dim], dw_row);
        }
    }
}

/// Input gradient of one sample: `dx_row[i] = sum_o dz[n][o] * w[o][i]`.
#[inline]
pub(crate) fn dense_grad_input_row(
    dz_row: &[f64],
    weights: &[f64],
    dx_row: &mut [f64],
) {
    let in_dim = dx_row.len();
    dx_row.fill(0.0);
    for (o, &g) in dz_row.iter().enumerate() {
        if g != 0.0 {
            axpy(g, &weights[o * in_dim..(o + 1) * in_dim], dx_row);
        }
    }
}

#[inline]
pub(crate) fn conv_forward_sample(
    x_sample: &[f64],
    weights: &[f64],
    bias: &[f64],
    act: Activation,
    d: &ConvDims,
    out_sample: &mut [f64],
) {
    let (oh, ow) = (d.out_h(), d.out_w());
    let kw = d.kernel_w;
    for oc in 0..d.out_channels {
        let w_oc = &weights[oc * d.kernel_size()..(oc + 1) * d.kernel_size()];
        for r in 0..oh {
            for c in 0..ow {
                let mut s = bias[oc];
                for ic in 0..d.in_channels {
                    let plane = &x_sample[ic * d.in_plane()..(ic + 1) * d.in_plane()];
                    let w_ic = &w_oc[ic * d.kernel_h * kw..(ic + 1) * d.kernel_h * kw];
                    for kr in 0..d.kernel_h {
                        let row = &plane[(r + kr) * d.in_w + c..(r + kr) * d.in_w + c + kw];
                        s += dot(&w_ic[kr * kw..(kr + 1) * kw], row);
                    }
                }
                out_sample[oc * d.out_plane() + r * ow + c] = act.apply(s);
            }
        }
    }
}

/// All weight gradients for one output channel.
#[inline]
pub(crate) fn conv_grad_weight_channel(
    oc: usize,
    dz: &[f64],
    x: &[f64],
    d: &ConvDims,
    dw_oc: &mut [f64],
) {
    let (oh, ow) = (d.out_h(), d.out_w());
    let kw = d.kernel_w;
    dw_oc.fill(0.0);
    for n in 0..d.batch {
        let dz_plane = &dz[n * d.out_sample() + oc * d.out_plane()..][..d.out_plane()];
        let x_sample = &x[n * d.in_sample()..(n + 1) * d.in_sample()];
        for ic in 0..d.in_channels {
            let x_plane = &x_sample[ic * d.in_plane()..(ic + 1) * d.in_plane()];
            let dw_ic = &mut dw_oc[ic * d.kernel_h * kw..(ic + 1) * d.kernel_h * kw];
            for r in 0..oh {
                for c in 0..ow {
                    let g = dz_plane[r * ow + c];
                    if g == 0.0 {
                        continue;
                    }
                    for kr in 0..d.kernel_h {
                        let x_row = &x_plane[(r + kr) * d.in_w + c..(r + kr) * d.in_w + c + kw];
                        axpy(g, x_row, &mut dw_ic[kr * kw..(kr + 1) * kw]);
                    }
                }
            }
        }
    }
}

/// Input gradient for one sample (full correlation transpose).
#[inline]
pub(crate) fn conv_grad_input_sample(
    dz_sample: &[f64],
    weights: &[f64],
    d: &ConvDims,
    dx_sample: &mut [f64],
) {
    let (oh, ow) = (d.out_h(), d.out_w());
    let kw = d.kernel_w;
    dx_sample.fill(0.0);
    for oc in 0..d.out_channels {
        let dz_plane = &dz_sample[oc * d.out_plane()..(oc + 1) * d.out_plane()];
        let w_oc = &weights[oc * d.kernel_size()..(oc + 1) * d.kernel_size()];
        for r in 0..oh {
            for c in 0..ow {
                let g = dz_plane[r * ow + c];
                if g == 0.0 {
                    continue;
                }
                for ic in 0..d.in_channels {
                    let w_ic = &w_oc[ic * d.kernel_h * kw..(ic + 1) * d.kernel_h * kw];
                    let dx_plane = &mut dx_sample[ic * d.in_plane()..(ic + 1) * d.in_plane()];
                    for kr in 0..d.kernel_h {
                        let dst = &mut dx_plane[(r + kr) * d.in_w + c..(r + kr) * d.in_w + c + kw];
                        axpy(g, &w_ic[kr * kw..(kr + 1) * kw], dst);
                    }
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Feature-selected dispatch.
// ---------------------------------------------------------------------------

macro_rules! dispatch {
    ($name:ident ( $($arg:expr),* )) => {{
        #[cfg(feature = "parallel")]
        {
            par::$name($($arg),*)
        }
        #[cfg(not(feature = "parallel"))]
        {
            seq::$name($($arg),*)
        }
    }};
}

/// `out[n] = act(W x[n] + b)` for a batch of flattened rows.
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
    debug_assert_eq!(x.len(), batch * in_dim);
    debug_assert_eq!(out.len(), batch * out_dim);
    dispatch!(dense_forward(x, batch, in_dim, weights, out_dim, bias, act, out))
}

/// `dw[o][i] = sum_n dz[n][o] * x[n][i]`.
pub fn dense_grad_weights(
    dz: &[f64],
    x: &[f64],
    batch: usize,
    out_dim: usize,
    in_dim: usize,
    dw: &mut [f64],
) {
    dispatch!(dense_grad_weights(dz, x, batch, out_dim, in_dim, dw))
}

/// `dx[n][i] = sum_o dz[n][o] * w[o][i]`.
pub fn dense_grad_input(
    dz: &[f64],
    weights: &[f64],
    batch: usize,
    out_dim: usize,
    in_dim: usize,
    dx: &mut [f64],
) {
    dispatch!(dense_grad_input(dz, weights, batch, out_dim, in_dim, dx))
}

/// Batched stride-1 valid convolution.
pub fn conv_forward(
    x: &[f64],
    weights: &[f64],
    bias: &[f64],
    act: Activation,
    d: &ConvDims,
    out: &mut [f64],
) {
    debug_assert_eq!(x.len(), d.batch * d.in_sample());
    debug_assert_eq!(out.len(), d.batch * d.out_sample());
    dispatch!(conv_forward(x, weights, bias, act, d, out))
}

pub fn conv_grad_weights(dz: &[f64], x: &[f64], d: &ConvDims, dw: &mut [f64]) {
    debug_assert_eq!(dw.len(), d.out_channels * d.kernel_size());
    dispatch!(conv_grad_weights(dz, x, d, dw))
}

pub fn conv_grad_input(dz: &[f64], weights: &[f64], d: &ConvDims, dx: &mut [f64]) {
    debug_assert_eq!(dx.len(), d.batch * d.in_sample());
    dispatch!(conv_grad_input(dz, weights, d, dx))
}
