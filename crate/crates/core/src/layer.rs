//! Layer descriptions and small architecture builders.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::Identity => x,
        }
    }

    /// Derivative as a function of the *post*-activation value. Valid for
    /// ReLU (output > 0 iff input > 0) and identity.
    #[inline]
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Dense {
        fan_in: usize,
        fan_out: usize,
    },
    /// 2-D convolution, stride 1, valid padding.
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn dense(fan_in: usize, fan_out: usize, activation: Activation) -> Self {
        LayerSpec {
            kind: LayerKind::Dense { fan_in, fan_out },
            activation,
        }
    }

    pub fn conv2d(
        in_channels: usize,
        out_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        activation: Activation,
    ) -> Self {
        LayerSpec {
            kind: LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel_h,
                kernel_w,
            },
            activation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            LayerKind::Dense { fan_in, fan_out } => {
                if fan_in == 0 || fan_out == 0 {
                    return Err(Error::config(format!(
                        "dense layer dimensions must be >= 1, got {fan_in}x{fan_out}"
                    )));
                }
            }
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel_h,
                kernel_w,
            } => {
                if in_channels == 0 || out_channels == 0 || kernel_h == 0 || kernel_w == 0 {
                    return Err(Error::config(
                        "conv layer dimensions must all be >= 1".to_string(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Shape of the weight tensor for this layer.
    pub fn weight_shape(&self) -> Vec<usize> {
        match self.kind {
            LayerKind::Dense { fan_in, fan_out } => vec![fan_out, fan_in],
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel_h,
                kernel_w,
            } => vec![out_channels, in_channels, kernel_h, kernel_w],
        }
    }

    /// Shape of the bias vector for this layer.
    pub fn bias_len(&self) -> usize {
        match self.kind {
            LayerKind::Dense { fan_out, .. } => fan_out,
            LayerKind::Conv2d { out_channels, .. } => out_channels,
        }
    }

    /// Inputs per output unit, used by the weight initializer.
    pub fn fan_in(&self) -> usize {
        match self.kind {
            LayerKind::Dense { fan_in, .. } => fan_in,
            LayerKind::Conv2d {
                in_channels,
                kernel_h,
                kernel_w,
                ..
            } => in_channels * kernel_h * kernel_w,
        }
    }

    /// Number of filters/units this layer outputs; the row/column count of
    /// connectivity matrices.
    pub fn filters(&self) -> usize {
        match self.kind {
            LayerKind::Dense { fan_out, .. } => fan_out,
            LayerKind::Conv2d { out_channels, .. } => out_channels,
        }
    }
}

/// Fully-connected stack: `input_dim -> hidden[0] -> ... -> classes`.
/// Hidden layers use ReLU, the logits layer is identity.
pub fn mlp_specs(input_dim: usize, hidden: &[usize], classes: usize) -> Vec<LayerSpec> {
    let mut specs = Vec::with_capacity(hidden.len() + 1);
    let mut prev = input_dim;
    for &h in hidden {
        specs.push(LayerSpec::dense(prev, h, Activation::Relu));
        prev = h;
    }
    specs.push(LayerSpec::dense(prev, classes, Activation::Identity));
    specs
}

/// Small convolutional stack for `1 x side x side` inputs:
/// conv 1->6 (5x5) -> dense 32 -> logits.
pub fn cnn_specs(side: usize, classes: usize) -> Result<Vec<LayerSpec>> {
    if side < 5 {
        return Err(Error::config(format!(
            "cnn architecture needs inputs of at least 5x5, got {side}x{side}"
        )));
    }
    let post = side - 4; // valid 5x5 convolution
    Ok(vec![
        LayerSpec::conv2d(1, 6, 5, 5, Activation::Relu),
        LayerSpec::dense(6 * post * post, 32, Activation::Relu),
        LayerSpec::dense(32, classes, Activation::Identity),
    ])
}
