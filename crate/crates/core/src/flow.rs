//! Flow snapshots: how a network routes information and gradients.
//!
//! Two snapshot kinds are supported. Connectivity captures, for each pair of
//! consecutive parameterized layers, the probe-averaged products of their
//! per-filter activations (an `M_l x M_{l+1}` matrix per pair). Gradient
//! flow captures each layer's masked loss gradient on the probe. Snapshots
//! of a fixed architecture always have the same shapes — masks zero tensors
//! but never shrink them — so distances between snapshots taken at
//! different epochs are well defined.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kernels;
use crate::layer::LayerKind;
use crate::network::Network;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FlowKind {
    /// Activation-product connectivity between consecutive layers.
    Connectivity,
    /// Masked loss gradients per layer.
    GradientFlow,
}

impl FlowKind {
    pub fn label(&self) -> &'static str {
        match self {
            FlowKind::Connectivity => "if",
            FlowKind::GradientFlow => "gf",
        }
    }
}

/// Fixed sample batch used for every snapshot of one experiment, so that
/// epoch-to-epoch distances estimate the same expectation.
#[derive(Clone, Debug)]
pub struct ProbeSet {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub seed: u64,
    id: u64,
}

impl ProbeSet {
    /// Draw `size` distinct samples (seeded, without replacement); takes the
    /// whole pool when it is smaller than `size`.
    pub fn sample(inputs: &Tensor, labels: &[usize], size: usize, seed: u64) -> Result<ProbeSet> {
        if inputs.rows() == 0 || inputs.rows() != labels.len() {
            return Err(Error::input(format!(
                "probe pool has {} inputs and {} labels",
                inputs.rows(),
                labels.len()
            )));
        }
        if size == 0 {
            return Err(Error::input("probe size must be >= 1".to_string()));
        }
        let n = inputs.rows();
        let take = size.min(n);
        let mut indices: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        indices.shuffle(&mut rng);
        indices.truncate(take);

        let width = inputs.row_len();
        let mut data = Vec::with_capacity(take * width);
        let mut picked_labels = Vec::with_capacity(take);
        for &i in &indices {
            data.extend_from_slice(inputs.row(i));
            picked_labels.push(labels[i]);
        }
        let mut shape = inputs.shape().to_vec();
        shape[0] = take;
        Ok(ProbeSet {
            inputs: Tensor::new(shape, data)?,
            labels: picked_labels,
            seed,
            id: probe_id(seed, take, width),
        })
    }

    /// Use a batch as-is, without subsampling.
    pub fn from_batch(inputs: Tensor, labels: Vec<usize>, seed: u64) -> Result<ProbeSet> {
        if inputs.rows() == 0 || inputs.rows() != labels.len() {
            return Err(Error::input("probe batch is empty or mislabeled".to_string()));
        }
        let id = probe_id(seed, inputs.rows(), inputs.row_len());
        Ok(ProbeSet {
            inputs,
            labels,
            seed,
            id,
        })
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn probe_id(seed: u64, n: usize, width: usize) -> u64 {
    // splitmix64 over the identifying fields
    let mut x = seed
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add((n as u64) << 32 | width as u64);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowSnapshot {
    pub kind: FlowKind,
    /// Connectivity: one `M_l x M_{l+1}` matrix per consecutive layer pair
    /// (layer_count - 1 entries). Gradient flow: one masked gradient tensor
    /// per layer (layer_count entries).
    pub layers: Vec<Tensor>,
    pub probe_id: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NormMode {
    /// Euclidean norm of all per-layer differences concatenated.
    GlobalL2,
    /// Mean over layers of `|a_l - b_l|_2 / (|b_l|_2 + floor)`, with `b`
    /// the reference snapshot. Unit-free, so one epsilon works across
    /// snapshot kinds and layer scales.
    PerLayerRelative,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowDistanceConfig {
    pub norm_mode: NormMode,
    /// Denominator guard for the relative mode.
    pub epsilon_floor: f64,
}

impl Default for FlowDistanceConfig {
    fn default() -> Self {
        FlowDistanceConfig {
            norm_mode: NormMode::PerLayerRelative,
            epsilon_floor: 1e-12,
        }
    }
}

impl FlowDistanceConfig {
    pub fn global_l2() -> Self {
        FlowDistanceConfig {
            norm_mode: NormMode::GlobalL2,
            epsilon_floor: 1e-12,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon_floor > 0.0) {
            return Err(Error::config(format!(
                "epsilon_floor must be positive, got {}",
                self.epsilon_floor
            )));
        }
        Ok(())
    }
}

/// Per-filter scalar activations of layer `l` from the last forward pass:
/// dense units pass through, conv filters are spatially averaged.
fn scalarized_activations(net: &Network, layer: usize) -> Tensor {
    let act = net
        .activation(layer)
        .expect("forward must run before scalarizing activations");
    match net.spec(layer).kind {
        LayerKind::Dense { .. } => act.clone(),
        LayerKind::Conv2d { out_channels, .. } => {
            let batch = act.rows();
            let plane: usize = act.shape()[2] * act.shape()[3];
            let inv = 1.0 / plane as f64;
            let mut out = Tensor::zeros(vec![batch, out_channels]);
            for n in 0..batch {
                let sample = act.row(n);
                let row = out.row_mut(n);
                for (c, r) in row.iter_mut().enumerate() {
                    let mut s = 0.0;
                    for v in &sample[c * plane..(c + 1) * plane] {
                        s += *v;
                    }
                    *r = s * inv;
                }
            }
            out
        }
    }
}

/// Connectivity snapshot: entry `(i, j)` of matrix `l` is the probe mean of
/// `a_i^(l) * a_j^(l+1)` over per-filter activations. The logits layer
/// contributes its pre-softmax outputs. Labels are not used.
pub fn connectivity(net: &mut Network, probe: &ProbeSet) -> Result<FlowSnapshot> {
    if probe.is_empty() {
        return Err(Error::input("probe set is empty".to_string()));
    }
    net.forward(&probe.inputs)?;
    let scalars: Vec<Tensor> = (0..net.layer_count())
        .map(|l| scalarized_activations(net, l))
        .collect();
    let n = probe.len();
    let inv = 1.0 / n as f64;
    let mut layers = Vec::with_capacity(net.layer_count() - 1);
    for pair in scalars.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let (m_l, m_next) = (a.row_len(), b.row_len());
        let mut delta = Tensor::zeros(vec![m_l, m_next]);
        // sum_n a[n][i] * b[n][j] is the weight-gradient contraction with
        // the roles (dz, x) = (a, b)
        kernels::dense_grad_weights(a.data(), b.data(), n, m_l, m_next, delta.data_mut());
        for v in delta.data_mut() {
            *v *= inv;
        }
        layers.push(delta);
    }
    Ok(FlowSnapshot {
        kind: FlowKind::Connectivity,
        layers,
        probe_id: probe.id,
    })
}

/// Gradient-flow snapshot: one full forward/backward over the probe (mean
/// loss, no weight update), each layer's weight gradient Hadamard-masked.
/// The network's weights are unchanged afterward.
pub fn gradient_flow(net: &mut Network, probe: &ProbeSet) -> Result<FlowSnapshot> {
    if probe.is_empty() {
        return Err(Error::input("probe set is empty".to_string()));
    }
    net.backward(&probe.inputs, &probe.labels)?;
    let layers: Vec<Tensor> = (0..net.layer_count())
        .map(|l| net.weight_grad(l).clone()) // backward already masks
        .collect();
    Ok(FlowSnapshot {
        kind: FlowKind::GradientFlow,
        layers,
        probe_id: probe.id,
    })
}

/// Snapshot the trained reference network. The caller stores the result for
/// the lifetime of the experiment; it is never recomputed.
pub fn capture_reference(net: &mut Network, probe: &ProbeSet, kind: FlowKind) -> Result<FlowSnapshot> {
    match kind {
        FlowKind::Connectivity => connectivity(net, probe),
        FlowKind::GradientFlow => gradient_flow(net, probe),
    }
}

/// Distance between two snapshots; `b` is the reference in relative mode.
pub fn flow_distance(a: &FlowSnapshot, b: &FlowSnapshot, cfg: &FlowDistanceConfig) -> Result<f64> {
    cfg.validate()?;
    if a.kind != b.kind {
        return Err(Error::input(format!(
            "cannot compare {:?} and {:?} snapshots",
            a.kind, b.kind
        )));
    }
    if a.probe_id != b.probe_id {
        return Err(Error::input(
            "snapshots were taken on different probe sets".to_string(),
        ));
    }
    if a.layers.len() != b.layers.len() {
        return Err(Error::input(format!(
            "snapshot layer counts differ: {} vs {}",
            a.layers.len(),
            b.layers.len()
        )));
    }
    for (l, (ta, tb)) in a.layers.iter().zip(&b.layers).enumerate() {
        if ta.shape() != tb.shape() {
            return Err(Error::input(format!(
                "snapshot layer {l} shapes differ: {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
    }
    match cfg.norm_mode {
        NormMode::GlobalL2 => {
            let mut sq = 0.0;
            for (ta, tb) in a.layers.iter().zip(&b.layers) {
                for (x, y) in ta.data().iter().zip(tb.data()) {
                    let d = x - y;
                    sq += d * d;
                }
            }
            Ok(sq.sqrt())
        }
        NormMode::PerLayerRelative => {
            let mut total = 0.0;
            for (ta, tb) in a.layers.iter().zip(&b.layers) {
                let mut diff_sq = 0.0;
                for (x, y) in ta.data().iter().zip(tb.data()) {
                    let d = x - y;
                    diff_sq += d * d;
                }
                total += diff_sq.sqrt() / (tb.l2_norm() + cfg.epsilon_floor);
            }
            Ok(total / a.layers.len() as f64)
        }
    }
}
