//! The outer prune/retrain loop.
//!
//! One run: train a dense reference network, snapshot its flow, then repeat
//! `T` times { retrain until the stopping criterion fires, compute per-layer
//! prune counts, zero the smallest surviving magnitudes }. Weights continue
//! from their current values after each prune (optional rewind modes restore
//! the classical reset-to-init variant).

use std::time::Instant;

use crate::data::{gather_labels, gather_rows, BatchIterator, Dataset};
use crate::error::{Error, Result};
use crate::flow::{
    capture_reference, connectivity, flow_distance, gradient_flow, FlowDistanceConfig,
    FlowKind, FlowSnapshot, ProbeSet,
};
use crate::layer::LayerSpec;
use crate::network::{build_network, Network, SgdConfig, WeightSnapshot};
use crate::sparsity::{prune_count, PqConfig};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PruneMethod {
    /// Fixed-rate magnitude pruning: `floor(rate * survivors)` per layer.
    Lth { rate: f64 },
    /// Adaptive counts from the pq compressibility bound.
    Sap(PqConfig),
}

impl PruneMethod {
    pub fn validate(&self) -> Result<()> {
        match self {
            PruneMethod::Lth { rate } => {
                if !(*rate > 0.0 && *rate < 1.0) {
                    return Err(Error::config(format!(
                        "lth rate must be in (0, 1), got {rate}"
                    )));
                }
                Ok(())
            }
            PruneMethod::Sap(cfg) => cfg.validate(),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            PruneMethod::Lth { .. } => "lth",
            PruneMethod::Sap(_) => "sap",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StoppingCriterion {
    /// Always train exactly `epochs` epochs.
    FixedEpochs { epochs: usize },
    /// Stop at the first epoch whose flow snapshot is within `epsilon` of
    /// the reference, with a hard cap of `max_epochs`.
    FlowEpsilon {
        kind: FlowKind,
        epsilon: f64,
        dist_cfg: FlowDistanceConfig,
        max_epochs: usize,
    },
}

impl StoppingCriterion {
    pub fn validate(&self) -> Result<()> {
        match self {
            StoppingCriterion::FixedEpochs { epochs } => {
                if *epochs == 0 {
                    return Err(Error::config("fixed epoch budget must be >= 1".to_string()));
                }
            }
            StoppingCriterion::FlowEpsilon {
                epsilon,
                max_epochs,
                dist_cfg,
                ..
            } => {
                if !(*epsilon > 0.0) {
                    return Err(Error::config(format!(
                        "flow epsilon must be positive, got {epsilon}"
                    )));
                }
                if *max_epochs == 0 {
                    return Err(Error::config("flow epoch cap must be >= 1".to_string()));
                }
                dist_cfg.validate()?;
            }
        }
        Ok(())
    }

    pub fn max_epochs(&self) -> usize {
        match self {
            StoppingCriterion::FixedEpochs { epochs } => *epochs,
            StoppingCriterion::FlowEpsilon { max_epochs, .. } => *max_epochs,
        }
    }

    pub fn flow_kind(&self) -> Option<FlowKind> {
        match self {
            StoppingCriterion::FixedEpochs { .. } => None,
            StoppingCriterion::FlowEpsilon { kind, .. } => Some(*kind),
        }
    }
}

/// What to reset weights to after each prune. `None` continues from the
/// current (just trained) weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RewindTo {
    None,
    Init,
    Finetuned,
}

#[derive(Clone, Debug)]
pub struct ImpConfig {
    /// Pruning iterations (T).
    pub iterations: usize,
    /// Epochs for the reference training phase and default per-iteration cap (E).
    pub max_epochs: usize,
    /// Warmup epochs before the reference phase (k).
    pub finetune_epochs: usize,
    pub method: PruneMethod,
    pub stopping: StoppingCriterion,
    pub sgd: SgdConfig,
    pub seed: u64,
    /// Trial count; carried for orchestration, a single `run_imp` call is one trial.
    pub trials: usize,
    /// Probe samples drawn from the train split for flow snapshots.
    pub probe_size: usize,
    /// Probe draw seed. One experiment's trials share it, so every trial
    /// measures flow against the same sample estimate of the expectation.
    pub probe_seed: u64,
    pub rewind: RewindTo,
    /// When a layer's count rounds to zero but more than one weight
    /// survives, prune one anyway so small layers keep shrinking.
    pub prune_stalled_layers: bool,
}

impl ImpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::config("iteration count must be >= 1".to_string()));
        }
        if self.max_epochs == 0 {
            return Err(Error::config("epoch budget must be >= 1".to_string()));
        }
        if self.trials == 0 {
            return Err(Error::config("trial count must be >= 1".to_string()));
        }
        if self.probe_size == 0 {
            return Err(Error::config("probe size must be >= 1".to_string()));
        }
        self.method.validate()?;
        self.stopping.validate()?;
        self.sgd.validate()
    }
}

/// Telemetry for one pruning iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    /// 1-based iteration index.
    pub iteration: usize,
    pub epochs_used: usize,
    /// Test accuracy after this iteration's training (before pruning).
    pub test_accuracy: f64,
    /// Mean training loss over the last epoch of this iteration.
    pub train_loss: f64,
    /// Surviving weights per layer after this iteration's prune.
    pub remaining_per_layer: Vec<usize>,
    pub remaining_total: usize,
    /// Weights pruned per layer this iteration.
    pub pruned_per_layer: Vec<usize>,
    /// Flow distance after each epoch (empty under fixed-epoch stopping).
    pub flow_distance_trace: Vec<f64>,
    /// Test accuracy after each epoch (parallel to the distance trace).
    pub accuracy_trace: Vec<f64>,
    /// Wall time of the iteration; excluded from determinism comparisons.
    pub wall_ms: u64,
}

/// Result of one seeded run.
#[derive(Debug)]
pub struct ImpRun {
    pub records: Vec<IterationRecord>,
    pub network: Network,
    /// Test accuracy of the trained dense reference network.
    pub reference_accuracy: f64,
    /// Flow distance of the freshly pruned network at iteration 1, before
    /// any retraining (present for flow-based stopping only).
    pub initial_prune_distance: Option<f64>,
}

/// Everything a checkpoint hook may want to persist after an iteration.
pub struct IterationEvent<'a> {
    pub iteration: usize,
    pub network: &'a Network,
    pub reference: Option<&'a FlowSnapshot>,
    pub current: Option<&'a FlowSnapshot>,
}

pub type IterationHook<'a> = dyn FnMut(&IterationEvent) -> Result<()> + 'a;

// ---------------------------------------------------------------------------
// Pruning primitives
// ---------------------------------------------------------------------------

/// Zero the mask over the `count` smallest-magnitude surviving weights
/// (ties broken toward the lowest flat index). Already pruned entries never
/// revive.
pub fn magnitude_prune_layer(weights: &Tensor, mask: &Tensor, count: usize) -> Result<Tensor> {
    if !weights.same_shape(mask) {
        return Err(Error::input("weights and mask shapes differ".to_string()));
    }
    let mut survivors: Vec<usize> = mask
        .data()
        .iter()
        .enumerate()
        .filter(|(_, &m)| m == 1.0)
        .map(|(i, _)| i)
        .collect();
    if count > survivors.len() {
        return Err(Error::input(format!(
            "cannot prune {count} of {} surviving weights",
            survivors.len()
        )));
    }
    let w = weights.data();
    survivors.sort_by(|&a, &b| w[a].abs().total_cmp(&w[b].abs()).then_with(|| a.cmp(&b)));
    let mut new_mask = mask.clone();
    for &i in &survivors[..count] {
        new_mask.data_mut()[i] = 0.0;
    }
    Ok(new_mask)
}

/// Per-layer prune counts for the configured method, computed on each
/// layer's surviving weights.
pub fn compute_layer_prune_counts(net: &Network, method: &PruneMethod) -> Result<Vec<usize>> {
    method.validate()?;
    let mut counts = Vec::with_capacity(net.layer_count());
    for l in 0..net.layer_count() {
        let survivors = net.survivors(l);
        if survivors == 0 {
            return Err(Error::input(format!("layer {l} has no surviving weights")));
        }
        let c = match method {
            PruneMethod::Lth { rate } => (rate * survivors as f64).floor() as usize,
            PruneMethod::Sap(cfg) => prune_count(&net.surviving_weights(l), cfg)?,
        };
        counts.push(c);
    }
    Ok(counts)
}

// ---------------------------------------------------------------------------
// Training loops
// ---------------------------------------------------------------------------

/// Mean training loss over one epoch of seeded-permutation minibatches.
fn train_one_epoch(
    net: &mut Network,
    dataset: &Dataset,
    sgd: &SgdConfig,
    base_seed: u64,
    epoch_index: u64,
) -> Result<f64> {
    let n = dataset.train_len();
    let it = BatchIterator::new(n, sgd.batch_size, base_seed, epoch_index);
    let mut loss_sum = 0.0;
    for batch in it.batches() {
        let inputs = gather_rows(&dataset.train_inputs, batch);
        let labels = gather_labels(&dataset.train_labels, batch);
        let loss = net.backward(&inputs, &labels)?;
        net.sgd_step(sgd)?;
        loss_sum += loss * batch.len() as f64;
    }
    Ok(loss_sum / n as f64)
}

/// Outcome of one iteration's training phase.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub epochs_used: usize,
    pub distance_trace: Vec<f64>,
    pub accuracy_trace: Vec<f64>,
    pub last_epoch_loss: f64,
    /// Snapshot from the stopping epoch (flow stopping only).
    pub last_snapshot: Option<FlowSnapshot>,
}

/// Train whole epochs until the criterion fires.
///
/// Fixed stopping runs exactly its budget and reports empty traces. Flow
/// stopping snapshots the network after every epoch and stops at the first
/// epoch whose distance to `reference` is within epsilon, else at the cap;
/// it also records per-epoch test accuracy alongside the distances.
#[allow(clippy::too_many_arguments)]
pub fn train_until_stop(
    net: &mut Network,
    dataset: &Dataset,
    stopping: &StoppingCriterion,
    sgd: &SgdConfig,
    probe: &ProbeSet,
    reference: Option<&FlowSnapshot>,
    base_seed: u64,
    epoch_counter: &mut u64,
) -> Result<TrainOutcome> {
    stopping.validate()?;
    match stopping {
        StoppingCriterion::FixedEpochs { epochs } => {
            let mut last = 0.0;
            for _ in 0..*epochs {
                last = train_one_epoch(net, dataset, sgd, base_seed, *epoch_counter)?;
                *epoch_counter += 1;
            }
            Ok(TrainOutcome {
                epochs_used: *epochs,
                distance_trace: Vec::new(),
                accuracy_trace: Vec::new(),
                last_epoch_loss: last,
                last_snapshot: None,
            })
        }
        StoppingCriterion::FlowEpsilon {
            kind,
            epsilon,
            dist_cfg,
            max_epochs,
        } => {
            let reference = reference.ok_or_else(|| {
                Error::config(
                    "flow-based stopping needs a reference snapshot".to_string(),
                )
            })?;
            let mut distance_trace = Vec::new();
            let mut accuracy_trace = Vec::new();
            let mut epochs_used = *max_epochs;
            for e in 1..=*max_epochs {
                let last = train_one_epoch(net, dataset, sgd, base_seed, *epoch_counter)?;
                *epoch_counter += 1;
                let snap = match kind {
                    FlowKind::Connectivity => connectivity(net, probe)?,
                    FlowKind::GradientFlow => gradient_flow(net, probe)?,
                };
                let d = flow_distance(&snap, reference, dist_cfg)?;
                distance_trace.push(d);
                accuracy_trace
                    .push(net.evaluate_accuracy(&dataset.test_inputs, &dataset.test_labels)?);
                if d <= *epsilon {
                    epochs_used = e;
                    return Ok(TrainOutcome {
                        epochs_used,
                        distance_trace,
                        accuracy_trace,
                        last_epoch_loss: last,
                        last_snapshot: Some(snap),
                    });
                }
                if e == *max_epochs {
                    return Ok(TrainOutcome {
                        epochs_used,
                        distance_trace,
                        accuracy_trace,
                        last_epoch_loss: last,
                        last_snapshot: Some(snap),
                    });
                }
            }
            unreachable!("loop always returns by the epoch cap {epochs_used}");
        }
    }
}

// ---------------------------------------------------------------------------
// The full run
// ---------------------------------------------------------------------------

/// Execute one seeded run: reference phase, then `iterations` rounds of
/// retrain / count / prune. Identical `(config, specs, dataset)` inputs give
/// bit-identical records (wall time aside).
pub fn run_imp(
    config: &ImpConfig,
    specs: &[LayerSpec],
    dataset: &Dataset,
    mut hook: Option<&mut IterationHook>,
) -> Result<ImpRun> {
    config.validate()?;
    let mut net = build_network(specs, config.seed)?;
    let probe = ProbeSet::sample(
        &dataset.train_inputs,
        &dataset.train_labels,
        config.probe_size,
        config.probe_seed ^ 0x70b5_e591_c3a1_d2f4,
    )?;

    let mut epoch_counter: u64 = 0;
    let init_snapshot = match config.rewind {
        RewindTo::Init => Some(net.snapshot()),
        _ => None,
    };

    // warmup, then the reference phase at the full epoch budget
    for _ in 0..config.finetune_epochs {
        train_one_epoch(&mut net, dataset, &config.sgd, config.seed, epoch_counter)?;
        epoch_counter += 1;
    }
    let finetuned_snapshot = match config.rewind {
        RewindTo::Finetuned => Some(net.snapshot()),
        _ => None,
    };
    for _ in 0..config.max_epochs {
        train_one_epoch(&mut net, dataset, &config.sgd, config.seed, epoch_counter)?;
        epoch_counter += 1;
    }
    let reference_accuracy =
        net.evaluate_accuracy(&dataset.test_inputs, &dataset.test_labels)?;
    let reference = match config.stopping.flow_kind() {
        Some(kind) => Some(capture_reference(&mut net, &probe, kind)?),
        None => None,
    };

    let mut initial_prune_distance = None;
    let mut records = Vec::with_capacity(config.iterations);
    for t in 1..=config.iterations {
        let started = Instant::now();
        let outcome = train_until_stop(
            &mut net,
            dataset,
            &config.stopping,
            &config.sgd,
            &probe,
            reference.as_ref(),
            config.seed,
            &mut epoch_counter,
        )?;
        let test_accuracy = match outcome.accuracy_trace.last() {
            Some(&acc) => acc,
            None => net.evaluate_accuracy(&dataset.test_inputs, &dataset.test_labels)?,
        };

        let mut counts = compute_layer_prune_counts(&net, &config.method)?;
        if config.prune_stalled_layers {
            for (l, c) in counts.iter_mut().enumerate() {
                if *c == 0 && net.survivors(l) > 1 {
                    *c = 1;
                }
            }
        }
        for l in 0..net.layer_count() {
            let new_mask = magnitude_prune_layer(net.weights(l), net.mask(l), counts[l])?;
            net.set_mask(l, new_mask)?;
            if net.survivors(l) == 0 {
                return Err(Error::DeadLayer { layer: l, iteration: t });
            }
        }

        match config.rewind {
            RewindTo::None => {}
            RewindTo::Init => rewind_parameters(&mut net, init_snapshot.as_ref().unwrap())?,
            RewindTo::Finetuned => {
                rewind_parameters(&mut net, finetuned_snapshot.as_ref().unwrap())?
            }
        }

        if t == 1 {
            if let (Some(kind), Some(reference)) =
                (config.stopping.flow_kind(), reference.as_ref())
            {
                let snap = match kind {
                    FlowKind::Connectivity => connectivity(&mut net, &probe)?,
                    FlowKind::GradientFlow => gradient_flow(&mut net, &probe)?,
                };
                let dist_cfg = match &config.stopping {
                    StoppingCriterion::FlowEpsilon { dist_cfg, .. } => *dist_cfg,
                    _ => unreachable!(),
                };
                initial_prune_distance = Some(flow_distance(&snap, reference, &dist_cfg)?);
            }
        }

        if let Some(hook) = hook.as_deref_mut() {
            hook(&IterationEvent {
                iteration: t,
                network: &net,
                reference: reference.as_ref(),
                current: outcome.last_snapshot.as_ref(),
            })?;
        }

        let remaining_per_layer = net.survivors_per_layer();
        let remaining_total = remaining_per_layer.iter().sum();
        records.push(IterationRecord {
            iteration: t,
            epochs_used: outcome.epochs_used,
            test_accuracy,
            train_loss: outcome.last_epoch_loss,
            remaining_per_layer,
            remaining_total,
            pruned_per_layer: counts,
            flow_distance_trace: outcome.distance_trace,
            accuracy_trace: outcome.accuracy_trace,
            wall_ms: started.elapsed().as_millis() as u64,
        });
    }

    Ok(ImpRun {
        records,
        network: net,
        reference_accuracy,
        initial_prune_distance,
    })
}

/// Reset weights and biases to a snapshot's values (current masks applied),
/// clearing optimizer momentum; masks are kept.
fn rewind_parameters(net: &mut Network, snap: &WeightSnapshot) -> Result<()> {
    for l in 0..net.layer_count() {
        net.set_weights(l, snap.weights()[l].clone())?;
        net.set_bias(l, snap.biases()[l].clone())?;
    }
    net.clear_momentum();
    Ok(())
}
