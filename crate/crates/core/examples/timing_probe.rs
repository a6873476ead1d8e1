// temporary pilot for the acceptance experiment dynamics (not shipped)
use incop::data::{standardize, synthetic_dataset, Dataset};
use incop::flow::{FlowDistanceConfig, FlowKind, NormMode};
use incop::imp::{run_imp, ImpConfig, PruneMethod, RewindTo, StoppingCriterion};
use incop::mlp_specs;
use incop::network::SgdConfig;
use incop::sparsity::{EtaMode, PqConfig};

fn base_config(seed: u64, wd: f64) -> ImpConfig {
    ImpConfig {
        iterations: 10,
        max_epochs: 20,
        finetune_epochs: 5,
        method: PruneMethod::Sap(PqConfig::new(0.5, 1.0, 1.0, 0.9, EtaMode::Fixed(0.0)).unwrap()),
        stopping: StoppingCriterion::FixedEpochs { epochs: 20 },
        sgd: SgdConfig { learning_rate: 0.01, momentum: 0.9, weight_decay: wd, batch_size: 64 },
        seed,
        trials: 1,
        probe_size: 512,
        probe_seed: 0,
        rewind: RewindTo::None,
        prune_stalled_layers: true,
    }
}

fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let n = v.len();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; n];
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j + 1 < n && v[idx[j + 1]] == v[idx[i]] { j += 1; }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for k in i..=j { r[idx[k]] = avg; }
            i = j + 1;
        }
        r
    }
    let rx = ranks(x);
    let ry = ranks(y);
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut num, mut dx, mut dy) = (0.0, 0.0, 0.0);
    for i in 0..x.len() {
        num += (rx[i] - mx) * (ry[i] - my);
        dx += (rx[i] - mx).powi(2);
        dy += (ry[i] - my).powi(2);
    }
    num / (dx.sqrt() * dy.sqrt())
}

fn finish(all_d: &[f64], all_a: &[f64]) {
    println!("pooled rho over {} pts: {:.3}", all_d.len(), spearman(all_d, all_a));
}

fn main() {
    let margin: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(6.0);
    let kind_arg = std::env::args().nth(2).unwrap_or_else(|| "gf".into());
    let wd: f64 = std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(0.0);
    let norm_arg = std::env::args().nth(4).unwrap_or_else(|| "rel".into());
    let base_seed: u64 = std::env::args().nth(5).and_then(|s| s.parse().ok()).unwrap_or(7001);
    let kind = if kind_arg == "if" { FlowKind::Connectivity } else { FlowKind::GradientFlow };
    let dist_cfg = if norm_arg == "l2" {
        FlowDistanceConfig::global_l2()
    } else {
        FlowDistanceConfig { norm_mode: NormMode::PerLayerRelative, epsilon_floor: 1e-12 }
    };
    println!("=== margin {margin} kind {kind_arg} wd {wd} norm {norm_arg} seed {base_seed} ===");
    let mut ds: Dataset = synthetic_dataset(10, 784, 1000, 42, margin).unwrap();
    standardize(&mut ds).unwrap();
    let specs = mlp_specs(784, &[128, 64], 10);

    // calibration on trial 0
    // trials share the experiment probe
    let probe_seed = base_seed;
    let mut cal_cfg = base_config(base_seed, wd);
    cal_cfg.probe_seed = probe_seed;
    cal_cfg.iterations = 1;
    cal_cfg.stopping = StoppingCriterion::FlowEpsilon { kind, epsilon: 1e-300, dist_cfg, max_epochs: 20 };
    let cal = run_imp(&cal_cfg, &specs, &ds, None).unwrap();
    let d0 = cal.initial_prune_distance.unwrap();
    let trace = &cal.records[0].flow_distance_trace;
    println!("ref_acc {:.4} d0 {:.5}", cal.reference_accuracy, d0);
    println!("trace: {:?}", trace.iter().map(|d| (d * 1e4).round() / 1e4).collect::<Vec<_>>());
    let pick = |level: f64| {
        let target = level * d0;
        *trace.iter().min_by(|a, b| (*a - target).abs().total_cmp(&(*b - target).abs())).unwrap()
    };
    let eps10 = pick(0.10);
    println!("eps10 = {eps10:.5}");

    // SAP trial 0 only (accuracy baseline), then InCoP for 3 trial seeds
    let mut sap_cfg = base_config(base_seed, wd);
    sap_cfg.probe_seed = probe_seed;
    sap_cfg.stopping = StoppingCriterion::FixedEpochs { epochs: 20 };
    let sap = run_imp(&sap_cfg, &specs, &ds, None).unwrap();
    println!("sap t0: acc_final {:.4} remain {:?}", sap.records[9].test_accuracy,
             sap.records.iter().map(|r| r.remaining_total).collect::<Vec<_>>());

    let (mut all_d, mut all_a) = (Vec::new(), Vec::new());
    for trial in 0..3u64 {
        let mut cfg = base_config(base_seed + trial, wd);
        cfg.probe_seed = probe_seed;
        cfg.stopping = StoppingCriterion::FlowEpsilon { kind, epsilon: eps10, dist_cfg, max_epochs: 20 };
        let run = run_imp(&cfg, &specs, &ds, None).unwrap();
        let total: usize = run.records.iter().map(|r| r.epochs_used).sum();
        let (mut dists, mut accs) = (Vec::new(), Vec::new());
        for r in &run.records {
            for (d, a) in r.flow_distance_trace.iter().zip(&r.accuracy_trace) {
                dists.push(*d);
                accs.push((a - run.reference_accuracy).abs());
            }
        }
        all_d.extend_from_slice(&dists);
        all_a.extend_from_slice(&accs);
        println!(
            "incop trial {trial}: total {total} epochs {:?} acc_final {:.4} rho {:.3} remain_final {}",
            run.records.iter().map(|r| r.epochs_used).collect::<Vec<_>>(),
            run.records[9].test_accuracy,
            spearman(&dists, &accs),
            run.records[9].remaining_total
        );
        if trial == 0 {
            for r in &run.records {
                let acc = &r.accuracy_trace;
                if acc.len() > 1 {
                    println!(
                        "  t={} acc e1 {:.4} min {:.4} last {:.4} | dist e1 {:.3} min {:.3} last {:.3}",
                        r.iteration,
                        acc[0],
                        acc.iter().cloned().fold(f64::INFINITY, f64::min),
                        acc.last().unwrap(),
                        r.flow_distance_trace[0],
                        r.flow_distance_trace.iter().cloned().fold(f64::INFINITY, f64::min),
                        r.flow_distance_trace.last().unwrap()
                    );
                }
            }
        }
    }
    finish(&all_d, &all_a);
}
