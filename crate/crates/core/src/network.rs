//! Layered network with masked parameters.
//!
//! The mask is the pruning state: a binary tensor shaped like the weights.
//! Pruned weights are held at exactly 0.0 and their gradients are forced to
//! exactly 0.0, so tensor shapes never change over a pruning run.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kernels::{self, ConvDims};
use crate::layer::{Activation, LayerKind, LayerSpec};
use crate::loss::loss_softmax_ce_with_grad;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 0.0,
            batch_size: 64,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.weight_decay < 0.0 || !self.weight_decay.is_finite() {
            return Err(Error::config(format!(
                "weight_decay must be nonnegative, got {}",
                self.weight_decay
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1".to_string()));
        }
        Ok(())
    }
}

/// Exact RNG position, captured so checkpoints can resume the stream.
#[derive(Clone, Debug, PartialEq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// Full trainable state at a point in time: parameters, masks, optimizer
/// momentum and RNG position. Restoring is bit-exact.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightSnapshot {
    pub(crate) specs: Vec<LayerSpec>,
    pub(crate) weights: Vec<Tensor>,
    pub(crate) biases: Vec<Tensor>,
    pub(crate) masks: Vec<Tensor>,
    pub(crate) vel_w: Vec<Tensor>,
    pub(crate) vel_b: Vec<Tensor>,
    pub(crate) rng: RngState,
}

#[derive(Debug)]
pub struct Network {
    specs: Vec<LayerSpec>,
    weights: Vec<Tensor>,
    biases: Vec<Tensor>,
    masks: Vec<Tensor>,
    vel_w: Vec<Tensor>,
    vel_b: Vec<Tensor>,
    activations: Vec<Tensor>,
    grads_w: Vec<Tensor>,
    grads_b: Vec<Tensor>,
    step_ready: bool,
    rng: ChaCha8Rng,
}

/// Build a masked network with He-uniform weights, zero biases and all-ones
/// masks. Identical `(specs, seed)` pairs produce bit-identical networks.
pub fn build_network(specs: &[LayerSpec], seed: u64) -> Result<Network> {
    if specs.len() < 2 {
        return Err(Error::config(format!(
            "a network needs at least 2 layers, got {}",
            specs.len()
        )));
    }
    for spec in specs {
        spec.validate()?;
    }
    if specs.last().unwrap().activation != Activation::Identity {
        return Err(Error::config(
            "the final layer must use the identity activation (logits)".to_string(),
        ));
    }
    for (l, pair) in specs.windows(2).enumerate() {
        match (pair[0].kind, pair[1].kind) {
            (LayerKind::Dense { fan_out, .. }, LayerKind::Dense { fan_in, .. }) => {
                if fan_out != fan_in {
                    return Err(Error::config(format!(
                        "layer {l} outputs {fan_out} features but layer {} expects {fan_in}",
                        l + 1
                    )));
                }
            }
            (LayerKind::Conv2d { out_channels, .. }, LayerKind::Conv2d { in_channels, .. }) => {
                if out_channels != in_channels {
                    return Err(Error::config(format!(
                        "layer {l} outputs {out_channels} channels but layer {} expects {in_channels}",
                        l + 1
                    )));
                }
            }
            // conv -> dense flattening is checked at forward time when the
            // spatial size is known.
            (LayerKind::Conv2d { .. }, LayerKind::Dense { .. }) => {}
            (LayerKind::Dense { .. }, LayerKind::Conv2d { .. }) => {
                return Err(Error::config(format!(
                    "layer {} cannot be a convolution after a dense layer",
                    l + 1
                )));
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = Vec::with_capacity(specs.len());
    let mut biases = Vec::with_capacity(specs.len());
    let mut masks = Vec::with_capacity(specs.len());
    let mut vel_w = Vec::with_capacity(specs.len());
    let mut vel_b = Vec::with_capacity(specs.len());
    let mut grads_w = Vec::with_capacity(specs.len());
    let mut grads_b = Vec::with_capacity(specs.len());
    for spec in specs {
        let shape = spec.weight_shape();
        let bound = (6.0 / spec.fan_in() as f64).sqrt();
        let dist = Uniform::new(-bound, bound);
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| dist.sample(&mut rng)).collect();
        weights.push(Tensor::new(shape.clone(), data)?);
        biases.push(Tensor::zeros(vec![spec.bias_len()]));
        masks.push(Tensor::filled(shape.clone(), 1.0));
        vel_w.push(Tensor::zeros(shape.clone()));
        vel_b.push(Tensor::zeros(vec![spec.bias_len()]));
        grads_w.push(Tensor::zeros(shape));
        grads_b.push(Tensor::zeros(vec![spec.bias_len()]));
    }

    Ok(Network {
        specs: specs.to_vec(),
        weights,
        biases,
        masks,
        vel_w,
        vel_b,
        activations: Vec::new(),
        grads_w,
        grads_b,
        step_ready: false,
        rng,
    })
}

fn conv_dims(spec: &LayerSpec, input_shape: &[usize]) -> Result<ConvDims> {
    let LayerKind::Conv2d {
        in_channels,
        out_channels,
        kernel_h,
        kernel_w,
    } = spec.kind
    else {
        unreachable!("conv_dims called on a dense layer");
    };
    let (batch, c, h, w) = match *input_shape {
        [n, c, h, w] => (n, c, h, w),
        // single-channel images may arrive as [batch, h, w]
        [n, h, w] if in_channels == 1 => (n, 1, h, w),
        _ => {
            return Err(Error::input(format!(
                "conv layer expects [batch, {in_channels}, h, w] input, got {input_shape:?}"
            )))
        }
    };
    if c != in_channels {
        return Err(Error::input(format!(
            "conv layer expects {in_channels} input channels, got {c}"
        )));
    }
    if h < kernel_h || w < kernel_w {
        return Err(Error::input(format!(
            "input {h}x{w} smaller than kernel {kernel_h}x{kernel_w}"
        )));
    }
    Ok(ConvDims {
        batch,
        in_channels,
        in_h: h,
        in_w: w,
        out_channels,
        kernel_h,
        kernel_w,
    })
}

fn apply_layer(
    spec: &LayerSpec,
    weights: &Tensor,
    bias: &Tensor,
    input: &Tensor,
) -> Result<Tensor> {
    let batch = input.rows();
    match spec.kind {
        LayerKind::Dense { fan_in, fan_out } => {
            if input.row_len() != fan_in {
                return Err(Error::input(format!(
                    "dense layer expects {fan_in} features per sample, got {}",
                    input.row_len()
                )));
            }
            let mut out = Tensor::zeros(vec![batch, fan_out]);
            kernels::dense_forward(
                input.data(),
                batch,
                fan_in,
                weights.data(),
                fan_out,
                bias.data(),
                spec.activation,
                out.data_mut(),
            );
            Ok(out)
        }
        LayerKind::Conv2d { out_channels, .. } => {
            let d = conv_dims(spec, input.shape())?;
            let mut out = Tensor::zeros(vec![batch, out_channels, d.out_h(), d.out_w()]);
            kernels::conv_forward(
                input.data(),
                weights.data(),
                bias.data(),
                spec.activation,
                &d,
                out.data_mut(),
            );
            Ok(out)
        }
    }
}

impl Network {
    pub fn layer_count(&self) -> usize {
        self.specs.len()
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn spec(&self, layer: usize) -> &LayerSpec {
        &self.specs[layer]
    }

    pub fn weights(&self, layer: usize) -> &Tensor {
        &self.weights[layer]
    }

    pub fn bias(&self, layer: usize) -> &Tensor {
        &self.biases[layer]
    }

    pub fn mask(&self, layer: usize) -> &Tensor {
        &self.masks[layer]
    }

    pub fn weight_grad(&self, layer: usize) -> &Tensor {
        &self.grads_w[layer]
    }

    pub fn bias_grad(&self, layer: usize) -> &Tensor {
        &self.grads_b[layer]
    }

    /// Post-activation output of `layer` from the most recent forward pass.
    pub fn activation(&self, layer: usize) -> Option<&Tensor> {
        self.activations.get(layer)
    }

    /// Replace a layer's weights; the current mask is re-applied so pruned
    /// positions stay zero.
    pub fn set_weights(&mut self, layer: usize, weights: Tensor) -> Result<()> {
        if !weights.same_shape(&self.weights[layer]) {
            return Err(Error::input(format!(
                "weight shape {:?} does not match layer shape {:?}",
                weights.shape(),
                self.weights[layer].shape()
            )));
        }
        self.weights[layer] = weights;
        self.weights[layer].hadamard_assign(&self.masks[layer]);
        Ok(())
    }

    pub fn set_bias(&mut self, layer: usize, bias: Tensor) -> Result<()> {
        if !bias.same_shape(&self.biases[layer]) {
            return Err(Error::input(format!(
                "bias shape {:?} does not match layer shape {:?}",
                bias.shape(),
                self.biases[layer].shape()
            )));
        }
        self.biases[layer] = bias;
        Ok(())
    }

    /// Install a new mask and zero the weights (and momentum) it kills.
    pub fn set_mask(&mut self, layer: usize, mask: Tensor) -> Result<()> {
        if !mask.same_shape(&self.masks[layer]) {
            return Err(Error::input(format!(
                "mask shape {:?} does not match layer shape {:?}",
                mask.shape(),
                self.masks[layer].shape()
            )));
        }
        if !mask.is_binary() {
            return Err(Error::input("mask entries must be exactly 0 or 1".to_string()));
        }
        self.masks[layer] = mask;
        self.weights[layer].hadamard_assign(&self.masks[layer]);
        self.vel_w[layer].hadamard_assign(&self.masks[layer]);
        Ok(())
    }

    /// Surviving (unmasked) weight count of one layer.
    pub fn survivors(&self, layer: usize) -> usize {
        self.masks[layer].data().iter().filter(|&&m| m == 1.0).count()
    }

    pub fn survivors_per_layer(&self) -> Vec<usize> {
        (0..self.layer_count()).map(|l| self.survivors(l)).collect()
    }

    pub fn total_survivors(&self) -> usize {
        self.survivors_per_layer().iter().sum()
    }

    /// Values of the unmasked weights of one layer, in flat index order.
    pub fn surviving_weights(&self, layer: usize) -> Vec<f64> {
        self.weights[layer]
            .data()
            .iter()
            .zip(self.masks[layer].data())
            .filter(|(_, &m)| m == 1.0)
            .map(|(&w, _)| w)
            .collect()
    }

    // Elementwise parameter access, used by the finite-difference harness.
    pub fn weight_value(&self, layer: usize, idx: usize) -> f64 {
        self.weights[layer].data()[idx]
    }
    pub fn set_weight_value(&mut self, layer: usize, idx: usize, v: f64) {
        self.weights[layer].data_mut()[idx] = v;
    }
    pub fn bias_value(&self, layer: usize, idx: usize) -> f64 {
        self.biases[layer].data()[idx]
    }
    pub fn set_bias_value(&mut self, layer: usize, idx: usize, v: f64) {
        self.biases[layer].data_mut()[idx] = v;
    }

    /// Run the batch through every layer, caching each post-activation
    /// output (the logits layer included, pre-softmax). Returns the logits.
    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        if input.shape().len() < 2 || input.rows() == 0 {
            return Err(Error::input(format!(
                "input must be [batch, ...] with a nonempty batch, got {:?}",
                input.shape()
            )));
        }
        let mut acts: Vec<Tensor> = Vec::with_capacity(self.specs.len());
        for (l, spec) in self.specs.iter().enumerate() {
            let layer_input = if l == 0 { input } else { &acts[l - 1] };
            let out = apply_layer(spec, &self.weights[l], &self.biases[l], layer_input)?;
            debug_assert!(out.is_finite(), "non-finite activation in layer {l}");
            acts.push(out);
        }
        self.activations = acts;
        Ok(self.activations.last().unwrap().clone())
    }

    /// Forward plus backpropagation of the mean softmax cross-entropy.
    /// Fills the gradient caches (masked entries forced to exactly zero)
    /// and returns the batch loss. Weights are not modified.
    pub fn backward(&mut self, input: &Tensor, labels: &[usize]) -> Result<f64> {
        let logits = self.forward(input)?;
        let (loss, dlogits) = loss_softmax_ce_with_grad(&logits, labels)?;
        let batch = input.rows();

        let mut upstream = dlogits; // dL/d(post-activation) of current layer
        for l in (0..self.specs.len()).rev() {
            let spec = self.specs[l];
            // delta = upstream ⊙ σ'(output)
            let mut delta = upstream;
            for (d, &y) in delta.data_mut().iter_mut().zip(self.activations[l].data()) {
                *d *= spec.activation.derivative_from_output(y);
            }
            let layer_input = if l == 0 { input } else { &self.activations[l - 1] };

            match spec.kind {
                LayerKind::Dense { fan_in, fan_out } => {
                    kernels::dense_grad_weights(
                        delta.data(),
                        layer_input.data(),
                        batch,
                        fan_out,
                        fan_in,
                        self.grads_w[l].data_mut(),
                    );
                    let db = self.grads_b[l].data_mut();
                    db.fill(0.0);
                    for n in 0..batch {
                        for (o, d) in delta.row(n).iter().enumerate() {
                            db[o] += *d;
                        }
                    }
                    if l > 0 {
                        let mut dx = Tensor::zeros(layer_input.shape().to_vec());
                        kernels::dense_grad_input(
                            delta.data(),
                            self.weights[l].data(),
                            batch,
                            fan_out,
                            fan_in,
                            dx.data_mut(),
                        );
                        upstream = dx;
                    } else {
                        upstream = delta;
                    }
                }
                LayerKind::Conv2d { .. } => {
                    let d = conv_dims(&spec, layer_input.shape())?;
                    kernels::conv_grad_weights(
                        delta.data(),
                        layer_input.data(),
                        &d,
                        self.grads_w[l].data_mut(),
                    );
                    let db = self.grads_b[l].data_mut();
                    db.fill(0.0);
                    let plane = d.out_plane();
                    for n in 0..batch {
                        let sample = delta.row(n);
                        for (oc, b) in db.iter_mut().enumerate() {
                            for v in &sample[oc * plane..(oc + 1) * plane] {
                                *b += *v;
                            }
                        }
                    }
                    if l > 0 {
                        let mut dx = Tensor::zeros(layer_input.shape().to_vec());
                        kernels::conv_grad_input(
                            delta.data(),
                            self.weights[l].data(),
                            &d,
                            dx.data_mut(),
                        );
                        upstream = dx;
                    } else {
                        upstream = delta;
                    }
                }
            }
            self.grads_w[l].hadamard_assign(&self.masks[l]);
        }
        self.step_ready = true;
        Ok(loss)
    }

    /// Momentum SGD on the cached gradients, then re-mask:
    /// `v ← μv + g; w ← w − lr·(v + λw); w ← m ⊙ w`.
    pub fn sgd_step(&mut self, cfg: &SgdConfig) -> Result<()> {
        cfg.validate()?;
        if !self.step_ready {
            return Err(Error::state(
                "sgd_step called before any backward pass".to_string(),
            ));
        }
        for l in 0..self.specs.len() {
            sgd_update(
                self.weights[l].data_mut(),
                self.vel_w[l].data_mut(),
                self.grads_w[l].data(),
                cfg,
            );
            self.weights[l].hadamard_assign(&self.masks[l]);
            sgd_update(
                self.biases[l].data_mut(),
                self.vel_b[l].data_mut(),
                self.grads_b[l].data(),
                cfg,
            );
        }
        Ok(())
    }

    /// Fraction of argmax-correct predictions, evaluated in fixed chunks.
    pub fn evaluate_accuracy(&mut self, inputs: &Tensor, labels: &[usize]) -> Result<f64> {
        if inputs.rows() == 0 || labels.is_empty() {
            return Err(Error::input("cannot evaluate on an empty dataset".to_string()));
        }
        if inputs.rows() != labels.len() {
            return Err(Error::input(format!(
                "{} samples but {} labels",
                inputs.rows(),
                labels.len()
            )));
        }
        let mut correct = 0usize;
        let chunk = 512usize;
        let mut start = 0;
        while start < inputs.rows() {
            let end = (start + chunk).min(inputs.rows());
            let batch = inputs.slice_rows(start, end);
            let logits = self.forward(&batch)?;
            for n in 0..logits.rows() {
                if argmax(logits.row(n)) == labels[start + n] {
                    correct += 1;
                }
            }
            start = end;
        }
        Ok(correct as f64 / labels.len() as f64)
    }

    /// Zero all optimizer momentum buffers (used by rewind modes).
    pub fn clear_momentum(&mut self) {
        for t in self.vel_w.iter_mut().chain(self.vel_b.iter_mut()) {
            t.data_mut().fill(0.0);
        }
    }

    pub fn snapshot(&self) -> WeightSnapshot {
        WeightSnapshot {
            specs: self.specs.clone(),
            weights: self.weights.clone(),
            biases: self.biases.clone(),
            masks: self.masks.clone(),
            vel_w: self.vel_w.clone(),
            vel_b: self.vel_b.clone(),
            rng: RngState::capture(&self.rng),
        }
    }

    /// Restore a snapshot bit-exactly. The snapshot must come from a network
    /// with the same layer stack.
    pub fn restore(&mut self, snap: &WeightSnapshot) -> Result<()> {
        if snap.specs != self.specs {
            return Err(Error::state(
                "snapshot layer stack does not match this network".to_string(),
            ));
        }
        self.weights = snap.weights.clone();
        self.biases = snap.biases.clone();
        self.masks = snap.masks.clone();
        self.vel_w = snap.vel_w.clone();
        self.vel_b = snap.vel_b.clone();
        self.rng = snap.rng.restore();
        self.step_ready = false;
        Ok(())
    }
}

impl WeightSnapshot {
    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn weights(&self) -> &[Tensor] {
        &self.weights
    }

    pub fn biases(&self) -> &[Tensor] {
        &self.biases
    }

    pub fn masks(&self) -> &[Tensor] {
        &self.masks
    }

    pub fn velocity_weights(&self) -> &[Tensor] {
        &self.vel_w
    }

    pub fn velocity_biases(&self) -> &[Tensor] {
        &self.vel_b
    }

    pub fn rng_state(&self) -> &RngState {
        &self.rng
    }

    /// Reassemble a snapshot from decoded parts, validating shapes.
    pub fn from_parts(
        specs: Vec<LayerSpec>,
        weights: Vec<Tensor>,
        biases: Vec<Tensor>,
        masks: Vec<Tensor>,
        vel_w: Vec<Tensor>,
        vel_b: Vec<Tensor>,
        rng: RngState,
    ) -> Result<WeightSnapshot> {
        let n = specs.len();
        if [weights.len(), biases.len(), masks.len(), vel_w.len(), vel_b.len()]
            .iter()
            .any(|&len| len != n)
        {
            return Err(Error::input(
                "snapshot sections disagree on layer count".to_string(),
            ));
        }
        for (l, spec) in specs.iter().enumerate() {
            let ws = spec.weight_shape();
            if weights[l].shape() != ws || masks[l].shape() != ws || vel_w[l].shape() != ws {
                return Err(Error::input(format!(
                    "layer {l} tensors do not match the declared shape {ws:?}"
                )));
            }
            if biases[l].len() != spec.bias_len() || vel_b[l].len() != spec.bias_len() {
                return Err(Error::input(format!(
                    "layer {l} bias length does not match the declared {}",
                    spec.bias_len()
                )));
            }
        }
        Ok(WeightSnapshot {
            specs,
            weights,
            biases,
            masks,
            vel_w,
            vel_b,
            rng,
        })
    }

    /// Rebuild a full network from the snapshot alone.
    pub fn into_network(self) -> Result<Network> {
        let grads_w = self.weights.iter().map(|t| Tensor::zeros(t.shape().to_vec())).collect();
        let grads_b = self.biases.iter().map(|t| Tensor::zeros(t.shape().to_vec())).collect();
        Ok(Network {
            rng: self.rng.restore(),
            specs: self.specs,
            weights: self.weights,
            biases: self.biases,
            masks: self.masks,
            vel_w: self.vel_w,
            vel_b: self.vel_b,
            activations: Vec::new(),
            grads_w,
            grads_b,
            step_ready: false,
        })
    }
}

fn sgd_update(params: &mut [f64], velocity: &mut [f64], grad: &[f64], cfg: &SgdConfig) {
    for i in 0..params.len() {
        velocity[i] = cfg.momentum * velocity[i] + grad[i];
        params[i] -= cfg.learning_rate * (velocity[i] + cfg.weight_decay * params[i]);
    }
}

#[inline]
fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}
