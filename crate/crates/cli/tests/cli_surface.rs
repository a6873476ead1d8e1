//! End-to-end exercises of the `incop` binary on a tiny synthetic
//! experiment: every subcommand, the exit-code contract, the pinned CSV
//! schemas, and rerun determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn incop() -> Command {
    Command::new(env!("CARGO_BIN_EXE_incop"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("binary runs");
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

const TINY_CONFIG: &str = r#"
seed = 11
trials = 2

[dataset]
name = "synthetic"
classes = 3
dims = 16
samples_per_class = 40
margin = 8.0
data_seed = 3

[model]
arch = "mlp"
hidden = [10]

[train]
lr = 0.05
momentum = 0.9
weight_decay = 0.0
batch_size = 16
E = 3
k = 1

[prune]
method = "sap"
p = 0.5
q = 1.0
gamma = 1.0
beta = 0.9
T = 3
epsilon = 0.5
flow_kind = "gf"
probe_size = 24
"#;

fn write_config(dir: &Path, name: &str, contents: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, contents).unwrap();
    path
}

#[test]
fn run_writes_expected_files_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "exp.toml", TINY_CONFIG);

    let out_a = dir.path().join("run_a");
    run_ok(incop()
        .args(["run", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out_a)
        .args(["--checkpoint-every", "2"]));

    for file in [
        "manifest.json",
        "summary.csv",
        "trial_0/iterations.csv",
        "trial_0/epochs_trace.csv",
        "trial_1/iterations.csv",
        "trial_1/epochs_trace.csv",
        "trial_0/checkpoint_iter_2.ckpt",
    ] {
        assert!(out_a.join(file).exists(), "missing {file}");
    }

    // pinned golden headers
    let iterations = std::fs::read_to_string(out_a.join("trial_0/iterations.csv")).unwrap();
    assert!(iterations.starts_with(
        "iteration,epochs_used,test_accuracy,train_loss,remaining_total,\
         remaining_layer_0,remaining_layer_1,pruned_layer_0,pruned_layer_1\n"
    ));
    let trace = std::fs::read_to_string(out_a.join("trial_0/epochs_trace.csv")).unwrap();
    assert!(trace.starts_with("iteration,epoch,flow_distance,test_accuracy\n"));
    let summary = std::fs::read_to_string(out_a.join("summary.csv")).unwrap();
    assert!(summary.starts_with(
        "iteration,epochs_used_mean,epochs_used_std,test_accuracy_mean,test_accuracy_std,\
         train_loss_mean,train_loss_std,remaining_total_mean,remaining_total_std\n"
    ));

    // reals carry 17 significant digits with '.' separators
    let data_line = iterations.lines().nth(1).unwrap();
    assert!(data_line.contains('e'), "scientific notation expected: {data_line}");

    // identical rerun in a fresh directory: byte-identical CSVs
    let out_b = dir.path().join("run_b");
    run_ok(incop()
        .args(["run", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out_b));
    for file in [
        "summary.csv",
        "trial_0/iterations.csv",
        "trial_0/epochs_trace.csv",
        "trial_1/iterations.csv",
    ] {
        let a = std::fs::read(out_a.join(file)).unwrap();
        let b = std::fs::read(out_b.join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between identical runs");
    }

    // trials=2 -> summary std computed over both trials, present and finite
    let summary_line = summary.lines().nth(1).unwrap();
    assert_eq!(summary_line.split(',').count(), 9);
}

#[test]
fn seed_override_changes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "exp.toml", TINY_CONFIG);
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    run_ok(incop().args(["run", "--config"]).arg(&config).arg("--out").arg(&out_a));
    run_ok(incop()
        .args(["run", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out_b)
        .args(["--seed-override", "999"]));
    let a = std::fs::read(out_a.join("trial_0/iterations.csv")).unwrap();
    let b = std::fs::read(out_b.join("trial_0/iterations.csv")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn invalid_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "bad.toml",
        &TINY_CONFIG.replace("lr = 0.05", "lr = -3.0"),
    );
    let out = incop()
        .args(["run", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(dir.path().join("x"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));

    // unknown keys are also configuration errors
    let config = write_config(
        dir.path(),
        "unknown.toml",
        &TINY_CONFIG.replace("seed = 11", "seed = 11\nmystery = true"),
    );
    let out = incop()
        .args(["run", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(dir.path().join("y"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn dead_layer_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    // beta = 1.0 with a huge gamma prunes a whole layer at iteration 1
    let config = write_config(
        dir.path(),
        "dead.toml",
        &TINY_CONFIG
            .replace("gamma = 1.0", "gamma = 100.0")
            .replace("beta = 0.9", "beta = 1.0"),
    );
    let out = incop()
        .args(["run", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(dir.path().join("x"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("layer") && stderr.contains("iteration"), "{stderr}");
}

#[test]
fn jobs_flag_preserves_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "exp.toml", TINY_CONFIG);
    let serial = dir.path().join("serial");
    let pooled = dir.path().join("pooled");
    run_ok(incop().args(["run", "--config"]).arg(&config).arg("--out").arg(&serial));
    run_ok(incop()
        .args(["run", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&pooled)
        .args(["--jobs", "2"]));
    for file in ["trial_0/iterations.csv", "trial_1/iterations.csv", "summary.csv"] {
        assert_eq!(
            std::fs::read(serial.join(file)).unwrap(),
            std::fs::read(pooled.join(file)).unwrap(),
            "{file} differs with --jobs 2"
        );
    }
}

#[test]
fn calibrate_then_run_then_compare() {
    let dir = tempfile::tempdir().unwrap();
    let flow_config = write_config(dir.path(), "flow.toml", TINY_CONFIG);

    // calibrate suggests reachable epsilon values
    let cal_dir = dir.path().join("cal");
    run_ok(incop()
        .args(["calibrate-epsilon", "--config"])
        .arg(&flow_config)
        .arg("--out")
        .arg(&cal_dir));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(cal_dir.join("calibration.json")).unwrap())
            .unwrap();
    let eps10 = report["suggested_epsilon_10pct"].as_f64().unwrap();
    assert!(eps10 > 0.0);
    let trace = report["trace"].as_array().unwrap();
    assert_eq!(trace.len(), 3); // E epochs logged
    assert!(report["initial_distance"].as_f64().unwrap() > 0.0);

    // fixed-budget baseline on the same data
    let fixed_config = write_config(
        dir.path(),
        "fixed.toml",
        &TINY_CONFIG
            .replace("epsilon = 0.5\n", "")
            .replace("flow_kind = \"gf\"\n", ""),
    );
    let sap_dir = dir.path().join("sap");
    run_ok(incop().args(["run", "--config"]).arg(&fixed_config).arg("--out").arg(&sap_dir));

    // flow run with the calibrated epsilon
    let incop_cfg = write_config(
        dir.path(),
        "incop.toml",
        &TINY_CONFIG.replace("epsilon = 0.5", &format!("epsilon = {eps10}")),
    );
    let flow_dir = dir.path().join("flow");
    run_ok(incop().args(["run", "--config"]).arg(&incop_cfg).arg("--out").arg(&flow_dir));

    // fixed-epochs baseline logs no trace rows
    let fixed_trace = std::fs::read_to_string(sap_dir.join("trial_0/epochs_trace.csv")).unwrap();
    assert_eq!(fixed_trace.lines().count(), 1, "only the header expected");

    let cmp_dir = dir.path().join("cmp");
    run_ok(incop()
        .arg("compare")
        .arg(&sap_dir)
        .arg(&flow_dir)
        .arg("--out")
        .arg(&cmp_dir));
    let compare = std::fs::read_to_string(cmp_dir.join("compare.csv")).unwrap();
    assert!(compare.starts_with("method,pq_pair,iteration,metric,mean,std\n"));
    assert!(compare.contains("\nsap,0.5-1,"));
    assert!(compare.contains("\nincop-gf,0.5-1,"));
    for metric in ["accuracy", "epochs_used", "remaining_weights"] {
        assert!(compare.contains(metric), "missing metric {metric}");
    }

    let totals = std::fs::read_to_string(cmp_dir.join("totals.csv")).unwrap();
    assert!(totals.starts_with("method,pq_pair,trial,total_epochs\n"));
    // fixed stopping: total epochs is exactly T x E = 9 for both trials
    let sap_totals: Vec<&str> = totals.lines().filter(|l| l.starts_with("sap,")).collect();
    assert_eq!(sap_totals.len(), 2);
    for line in sap_totals {
        assert!(line.ends_with(",9"), "{line}");
    }

    // comparing a run with itself: both blocks carry identical numbers
    let self_dir = dir.path().join("self_cmp");
    run_ok(incop()
        .arg("compare")
        .arg(&sap_dir)
        .arg(&sap_dir)
        .arg("--out")
        .arg(&self_dir));
    let self_compare = std::fs::read_to_string(self_dir.join("compare.csv")).unwrap();
    let rows: Vec<&str> = self_compare.lines().skip(1).collect();
    let (first, second) = rows.split_at(rows.len() / 2);
    assert_eq!(first, second);

    // mismatched iteration counts are a comparison error
    let short_cfg = write_config(
        dir.path(),
        "short.toml",
        &TINY_CONFIG.replace("T = 3", "T = 2").replace("epsilon = 0.5\n", "").replace("flow_kind = \"gf\"\n", ""),
    );
    let short_dir = dir.path().join("short");
    run_ok(incop().args(["run", "--config"]).arg(&short_cfg).arg("--out").arg(&short_dir));
    let out = incop()
        .arg("compare")
        .arg(&sap_dir)
        .arg(&short_dir)
        .arg("--out")
        .arg(dir.path().join("bad_cmp"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("comparison error"));
}

#[test]
fn inspect_flows_reports_norms_and_distance() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "exp.toml", TINY_CONFIG);
    let run_dir = dir.path().join("run");
    run_ok(incop()
        .args(["run", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&run_dir)
        .args(["--checkpoint-every", "1"]));

    let ckpt = run_dir.join("trial_0/checkpoint_iter_1.ckpt");
    let out = run_ok(incop().arg("inspect-flows").arg(&ckpt));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("section,kind,layer,shape,l2_norm\n"));
    assert!(text.contains("reference,gf,0,"));
    assert!(text.contains("current,gf,"));
    assert!(text.contains("distance_to_reference,per_layer_relative"));

    // norms match an independent recomputation from the same checkpoint
    let checkpoint = incop::checkpoint::read_checkpoint(&ckpt).unwrap();
    let reference = checkpoint.reference.expect("reference stored");
    for (l, tensor) in reference.layers.iter().enumerate() {
        let expected = tensor.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        let line = text
            .lines()
            .find(|line| line.starts_with(&format!("reference,gf,{l},")))
            .unwrap();
        let printed: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!(
            (printed - expected).abs() <= 1e-9 * expected.max(1.0),
            "layer {l}: {printed} vs {expected}"
        );
    }

    // a checkpoint without snapshots is a format error
    let bare = incop::checkpoint::Checkpoint {
        state: checkpoint.state,
        reference: None,
        current: None,
    };
    let bare_path = dir.path().join("bare.ckpt");
    incop::checkpoint::write_checkpoint(&bare_path, &bare).unwrap();
    let out = incop().arg("inspect-flows").arg(&bare_path).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("snapshot"));
}

#[test]
fn gen_data_round_trips_through_idx() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "exp.toml", TINY_CONFIG);
    let data_dir = dir.path().join("data");
    run_ok(incop().args(["gen-data", "--config"]).arg(&config).arg("--out").arg(&data_dir));

    let (train, train_labels) = incop::data::load_idx(
        &data_dir.join("train-images-idx3-ubyte"),
        &data_dir.join("train-labels-idx1-ubyte"),
    )
    .unwrap();
    assert_eq!(train.rows(), 3 * 40);
    assert_eq!(train_labels.len(), 120);

    // loaded values sit on the /255 grid, so a save/load cycle is bit-exact
    let img2 = data_dir.join("rt-images-idx3-ubyte");
    let lab2 = data_dir.join("rt-labels-idx1-ubyte");
    incop::data::save_idx(&img2, &lab2, &train, &train_labels).unwrap();
    let (train2, labels2) = incop::data::load_idx(&img2, &lab2).unwrap();
    assert_eq!(train, train2);
    assert_eq!(train_labels, labels2);

    // the mnist-format path consumes the generated files
    let mnist_cfg = write_config(
        dir.path(),
        "mnist.toml",
        &TINY_CONFIG
            .replace(
                "name = \"synthetic\"",
                &format!("name = \"mnist\"\ndir = \"{}\"", data_dir.display()),
            )
            .replace("classes = 3\n", "")
            .replace("dims = 16\n", "")
            .replace("samples_per_class = 40\n", "")
            .replace("margin = 8.0\n", ""),
    );
    let run_dir = dir.path().join("mnist_run");
    run_ok(incop().args(["run", "--config"]).arg(&mnist_cfg).arg("--out").arg(&run_dir));
    assert!(run_dir.join("summary.csv").exists());
}
