//! The `calibrate-epsilon` command: run iteration 1 at the full epoch
//! budget, record the flow-distance trace, and report candidate epsilons.
//!
//! Candidates are the trace values closest to {5, 10, 25}% of the
//! post-first-prune initial distance, so every suggestion is a distance the
//! retraining actually reached (a constant trace yields three equal
//! suggestions).

use std::path::Path;

use serde::{Deserialize, Serialize};

use incop::flow::FlowDistanceConfig;
use incop::imp::{run_imp, StoppingCriterion};

use crate::config::ExperimentConfig;

pub const CALIBRATION_FILE: &str = "calibration.json";

#[derive(Clone, Debug, Deserialize, Serialize)]
pub struct CalibrationReport {
    pub flow_kind: String,
    /// Distance of the freshly pruned network to the reference, before any
    /// retraining epoch.
    pub initial_distance: f64,
    /// Distance after each retraining epoch of iteration 1.
    pub trace: Vec<f64>,
    pub suggested_epsilon_5pct: f64,
    pub suggested_epsilon_10pct: f64,
    pub suggested_epsilon_25pct: f64,
}

/// Trace value closest to `level * initial`; earlier epochs win ties.
pub fn pick_epsilon(trace: &[f64], initial: f64, level: f64) -> f64 {
    let target = level * initial;
    let mut best = trace[0];
    for &v in trace {
        if (v - target).abs() < (best - target).abs() {
            best = v;
        }
    }
    best
}

pub fn cmd_calibrate(
    config_path: &Path,
    out_dir: &Path,
    seed_override: Option<u64>,
) -> anyhow::Result<CalibrationReport> {
    let config = ExperimentConfig::from_path(config_path)?;
    let kind = config.flow_kind().ok_or_else(|| {
        anyhow::anyhow!("config field `prune.flow_kind`: required to calibrate epsilon")
    })?;
    std::fs::create_dir_all(out_dir)?;
    let dataset = config.load_dataset()?;
    let specs = config.layer_specs(&dataset.input_shape, dataset.num_classes)?;

    // one iteration at the fixed budget; the epsilon below can never fire,
    // so the run trains all epochs while logging the distance trace
    let mut imp_config = config.imp_config(0, seed_override)?;
    imp_config.iterations = 1;
    imp_config.stopping = StoppingCriterion::FlowEpsilon {
        kind,
        epsilon: f64::MIN_POSITIVE,
        dist_cfg: config.dist_config(),
        max_epochs: config.train.epochs,
    };

    let run = run_imp(&imp_config, &specs, &dataset, None)?;
    let initial = run
        .initial_prune_distance
        .expect("flow stopping records the post-prune distance");
    let trace = run.records[0].flow_distance_trace.clone();
    let _ = FlowDistanceConfig::default();

    let report = CalibrationReport {
        flow_kind: kind.label().to_string(),
        initial_distance: initial,
        suggested_epsilon_5pct: pick_epsilon(&trace, initial, 0.05),
        suggested_epsilon_10pct: pick_epsilon(&trace, initial, 0.10),
        suggested_epsilon_25pct: pick_epsilon(&trace, initial, 0.25),
        trace,
    };
    std::fs::write(
        out_dir.join(CALIBRATION_FILE),
        serde_json::to_string_pretty(&report)?,
    )?;
    println!(
        "initial distance {:.6}; suggested epsilon: 5% {:.6}, 10% {:.6}, 25% {:.6}",
        report.initial_distance,
        report.suggested_epsilon_5pct,
        report.suggested_epsilon_10pct,
        report.suggested_epsilon_25pct
    );
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decreasing_trace_gives_ordered_suggestions() {
        let trace: Vec<f64> = (0..20).map(|e| 1.0 / (e as f64 + 2.0)).collect();
        let initial = 1.0;
        let e5 = pick_epsilon(&trace, initial, 0.05);
        let e10 = pick_epsilon(&trace, initial, 0.10);
        let e25 = pick_epsilon(&trace, initial, 0.25);
        assert!(e5 < e10 && e10 < e25, "{e5} {e10} {e25}");
    }

    #[test]
    fn constant_trace_gives_equal_suggestions() {
        let trace = vec![0.3; 20];
        let e5 = pick_epsilon(&trace, 0.3, 0.05);
        let e10 = pick_epsilon(&trace, 0.3, 0.10);
        let e25 = pick_epsilon(&trace, 0.3, 0.25);
        assert_eq!(e5, 0.3);
        assert_eq!(e5, e10);
        assert_eq!(e10, e25);
    }

    #[test]
    fn suggestions_are_always_reachable_trace_values() {
        let trace = vec![0.9, 0.5, 0.4, 0.35];
        for level in [0.05, 0.10, 0.25] {
            let eps = pick_epsilon(&trace, 1.0, level);
            assert!(trace.contains(&eps));
        }
    }
}
