//! Versioned binary checkpoint container.
//!
//! Layout: the magic string `INCOPCKPT`, a u16 format version, the layer
//! stack, then per layer (shape, weights, mask, bias), the optimizer
//! momentum buffers, the RNG position, and finally zero or more flow
//! snapshots (reference and/or current) for offline inspection. All
//! multi-byte values are little-endian; round-trips are bit-exact.

use std::path::Path;

use crate::error::{Error, Result};
use crate::flow::{FlowKind, FlowSnapshot};
use crate::layer::{Activation, LayerKind, LayerSpec};
use crate::network::{RngState, WeightSnapshot};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 9] = b"INCOPCKPT";
pub const FORMAT_VERSION: u16 = 1;

/// Everything a checkpoint file can hold.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub state: WeightSnapshot,
    /// Flow snapshot of the trained dense reference network.
    pub reference: Option<FlowSnapshot>,
    /// Flow snapshot current at checkpoint time.
    pub current: Option<FlowSnapshot>,
}

pub fn write_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    std::fs::write(path, encode_checkpoint(checkpoint))?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))?;
    decode_checkpoint(&bytes)
}

pub fn encode_checkpoint(checkpoint: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());

    let state = &checkpoint.state;
    out.extend_from_slice(&(state.specs().len() as u32).to_le_bytes());
    for (l, spec) in state.specs().iter().enumerate() {
        encode_spec(&mut out, spec);
        encode_tensor(&mut out, &state.weights()[l]);
        // masks are binary; stored one byte per entry
        out.extend(state.masks()[l].data().iter().map(|&m| m as u8));
        encode_tensor(&mut out, &state.biases()[l]);
    }
    for l in 0..state.specs().len() {
        encode_tensor(&mut out, &state.velocity_weights()[l]);
        encode_tensor(&mut out, &state.velocity_biases()[l]);
    }
    let rng = state.rng_state();
    out.extend_from_slice(&rng.seed);
    out.extend_from_slice(&rng.stream.to_le_bytes());
    out.extend_from_slice(&rng.word_pos.to_le_bytes());

    let snapshots: Vec<(&FlowSnapshot, u8)> = checkpoint
        .reference
        .iter()
        .map(|s| (s, 0u8))
        .chain(checkpoint.current.iter().map(|s| (s, 1u8)))
        .collect();
    out.extend_from_slice(&(snapshots.len() as u32).to_le_bytes());
    for (snap, role) in snapshots {
        out.push(role);
        out.push(match snap.kind {
            FlowKind::Connectivity => 0,
            FlowKind::GradientFlow => 1,
        });
        out.extend_from_slice(&snap.probe_id.to_le_bytes());
        out.extend_from_slice(&(snap.layers.len() as u32).to_le_bytes());
        for t in &snap.layers {
            encode_tensor(&mut out, t);
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(MAGIC.len(), "magic")?;
    if magic != MAGIC {
        return Err(Error::format(0, "not a checkpoint file (bad magic)".to_string()));
    }
    let version = r.u16("format version")?;
    if version != FORMAT_VERSION {
        return Err(Error::format(
            (MAGIC.len()) as u64,
            format!("unsupported format version {version}"),
        ));
    }

    let layers = r.u32("layer count")? as usize;
    let mut specs = Vec::with_capacity(layers);
    let mut weights = Vec::with_capacity(layers);
    let mut masks = Vec::with_capacity(layers);
    let mut biases = Vec::with_capacity(layers);
    for _ in 0..layers {
        let spec = decode_spec(&mut r)?;
        let w = decode_tensor(&mut r)?;
        let offset = r.pos as u64;
        let mask_bytes = r.take(w.len(), "mask payload")?;
        let mask_data: Vec<f64> = mask_bytes.iter().map(|&b| b as f64).collect();
        let mask = Tensor::new(w.shape().to_vec(), mask_data)
            .map_err(|e| Error::format(offset, e.to_string()))?;
        if !mask.is_binary() {
            return Err(Error::format(offset, "mask entries must be 0 or 1".to_string()));
        }
        let b = decode_tensor(&mut r)?;
        specs.push(spec);
        weights.push(w);
        masks.push(mask);
        biases.push(b);
    }
    let mut vel_w = Vec::with_capacity(layers);
    let mut vel_b = Vec::with_capacity(layers);
    for _ in 0..layers {
        vel_w.push(decode_tensor(&mut r)?);
        vel_b.push(decode_tensor(&mut r)?);
    }
    let seed: [u8; 32] = r
        .take(32, "rng seed")?
        .try_into()
        .expect("fixed-size slice");
    let stream = r.u64("rng stream")?;
    let word_pos = r.u128("rng word position")?;
    let state = WeightSnapshot::from_parts(
        specs,
        weights,
        biases,
        masks,
        vel_w,
        vel_b,
        RngState {
            seed,
            stream,
            word_pos,
        },
    )?;

    let snapshot_count = r.u32("snapshot count")? as usize;
    let mut reference = None;
    let mut current = None;
    for _ in 0..snapshot_count {
        let role_offset = r.pos as u64;
        let role = r.u8("snapshot role")?;
        let kind = match r.u8("snapshot kind")? {
            0 => FlowKind::Connectivity,
            1 => FlowKind::GradientFlow,
            other => {
                return Err(Error::format(
                    r.pos as u64 - 1,
                    format!("unknown snapshot kind tag {other}"),
                ))
            }
        };
        let probe_id = r.u64("probe id")?;
        let n = r.u32("snapshot layer count")? as usize;
        let mut tensors = Vec::with_capacity(n);
        for _ in 0..n {
            tensors.push(decode_tensor(&mut r)?);
        }
        let snap = FlowSnapshot {
            kind,
            layers: tensors,
            probe_id,
        };
        match role {
            0 => reference = Some(snap),
            1 => current = Some(snap),
            other => {
                return Err(Error::format(
                    role_offset,
                    format!("unknown snapshot role tag {other}"),
                ))
            }
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::format(
            r.pos as u64,
            format!("{} trailing bytes after checkpoint payload", bytes.len() - r.pos),
        ));
    }
    Ok(Checkpoint {
        state,
        reference,
        current,
    })
}

fn encode_spec(out: &mut Vec<u8>, spec: &LayerSpec) {
    match spec.kind {
        LayerKind::Dense { fan_in, fan_out } => {
            out.push(0);
            out.extend_from_slice(&(fan_in as u32).to_le_bytes());
            out.extend_from_slice(&(fan_out as u32).to_le_bytes());
        }
        LayerKind::Conv2d {
            in_channels,
            out_channels,
            kernel_h,
            kernel_w,
        } => {
            out.push(1);
            for d in [in_channels, out_channels, kernel_h, kernel_w] {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
        }
    }
    out.push(match spec.activation {
        Activation::Relu => 0,
        Activation::Identity => 1,
    });
}

fn decode_spec(r: &mut Reader) -> Result<LayerSpec> {
    let tag_offset = r.pos as u64;
    let kind = match r.u8("layer kind tag")? {
        0 => {
            let fan_in = r.u32("dense fan_in")? as usize;
            let fan_out = r.u32("dense fan_out")? as usize;
            LayerKind::Dense { fan_in, fan_out }
        }
        1 => {
            let in_channels = r.u32("conv in_channels")? as usize;
            let out_channels = r.u32("conv out_channels")? as usize;
            let kernel_h = r.u32("conv kernel_h")? as usize;
            let kernel_w = r.u32("conv kernel_w")? as usize;
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel_h,
                kernel_w,
            }
        }
        other => {
            return Err(Error::format(
                tag_offset,
                format!("unknown layer kind tag {other}"),
            ))
        }
    };
    let activation = match r.u8("activation tag")? {
        0 => Activation::Relu,
        1 => Activation::Identity,
        other => {
            return Err(Error::format(
                r.pos as u64 - 1,
                format!("unknown activation tag {other}"),
            ))
        }
    };
    Ok(LayerSpec { kind, activation })
}

fn encode_tensor(out: &mut Vec<u8>, t: &Tensor) {
    out.push(t.shape().len() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn decode_tensor(r: &mut Reader) -> Result<Tensor> {
    let start = r.pos as u64;
    let ndim = r.u8("tensor rank")? as usize;
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        shape.push(r.u32("tensor dimension")? as usize);
    }
    let n: usize = shape.iter().product();
    let payload = r.take(n * 8, "tensor payload")?;
    let data: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(shape, data).map_err(|e| Error::format(start, e.to_string()))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(
                self.bytes.len() as u64,
                format!("file truncated while reading {what}"),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn u128(&mut self, what: &str) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take(16, what)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{gradient_flow, ProbeSet};
    use crate::layer::mlp_specs;
    use crate::network::{build_network, SgdConfig};

    fn trained_net() -> crate::network::Network {
        let mut net = build_network(&mlp_specs(4, &[5], 3), 23).unwrap();
        let inputs = Tensor::new(
            vec![4, 4],
            vec![
                0.1, -0.4, 0.9, 0.3, 0.5, 0.5, -0.2, 0.8, -0.9, 0.2, 0.4, -0.1, 0.3, 0.7, -0.6,
                0.2,
            ],
        )
        .unwrap();
        for _ in 0..3 {
            net.backward(&inputs, &[0, 1, 2, 0]).unwrap();
            net.sgd_step(&SgdConfig::default()).unwrap();
        }
        let mut mask = Tensor::filled(vec![5, 4], 1.0);
        mask.data_mut()[3] = 0.0;
        net.set_mask(0, mask).unwrap();
        net
    }

    #[test]
    fn container_round_trip_is_bit_exact() {
        let mut net = trained_net();
        let probe = ProbeSet::from_batch(
            Tensor::new(vec![2, 4], vec![0.1, 0.2, 0.3, 0.4, -0.1, -0.2, -0.3, -0.4]).unwrap(),
            vec![0, 2],
            9,
        )
        .unwrap();
        let gf = gradient_flow(&mut net, &probe).unwrap();
        let checkpoint = Checkpoint {
            state: net.snapshot(),
            reference: Some(gf.clone()),
            current: Some(gf),
        };
        let bytes = encode_checkpoint(&checkpoint);
        assert_eq!(&bytes[..9], MAGIC);
        let decoded = decode_checkpoint(&bytes).unwrap();
        assert_eq!(decoded, checkpoint);
        // and a second encode is byte-identical
        assert_eq!(encode_checkpoint(&decoded), bytes);
    }

    #[test]
    fn restored_network_behaves_identically() {
        let mut net = trained_net();
        let inputs = Tensor::new(vec![1, 4], vec![0.3, -0.3, 0.5, 0.0]).unwrap();
        let before = net.forward(&inputs).unwrap();

        let checkpoint = Checkpoint {
            state: net.snapshot(),
            reference: None,
            current: None,
        };
        let bytes = encode_checkpoint(&checkpoint);
        let mut revived = decode_checkpoint(&bytes).unwrap().state.into_network().unwrap();
        let after = revived.forward(&inputs).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn corrupt_payloads_name_the_offset() {
        let err = decode_checkpoint(b"NOTACKPT!").unwrap_err();
        assert!(matches!(err, Error::Format { offset: 0, .. }));

        let net = trained_net();
        let checkpoint = Checkpoint {
            state: net.snapshot(),
            reference: None,
            current: None,
        };
        let bytes = encode_checkpoint(&checkpoint);
        let truncated = &bytes[..bytes.len() - 3];
        assert!(matches!(
            decode_checkpoint(truncated),
            Err(Error::Format { .. })
        ));
    }
}
