//! The `compare` command: merge completed runs into plot-ready long-format
//! CSV plus a per-trial total-epochs table.

use std::path::Path;

use crate::csvio::{fmt_f64, mean_std};
use crate::manifest::RunManifest;

pub const COMPARE_HEADER: &str = "method,pq_pair,iteration,metric,mean,std";
pub const TOTALS_HEADER: &str = "method,pq_pair,trial,total_epochs";

/// Per-trial values for one run, parsed back from its iterations.csv files.
struct LoadedRun {
    method: String,
    pq_pair: String,
    iterations: usize,
    /// [trial][iteration] -> (epochs_used, accuracy, remaining_total)
    trials: Vec<Vec<(f64, f64, f64)>>,
}

fn load_run(dir: &Path) -> anyhow::Result<(RunManifest, LoadedRun)> {
    let manifest = RunManifest::load(dir)?;
    let mut trials = Vec::with_capacity(manifest.trials);
    for trial in 0..manifest.trials {
        let path = dir.join(format!("trial_{trial}/iterations.csv"));
        let mut reader = csv::Reader::from_path(&path)
            .map_err(|e| anyhow::anyhow!("cannot read {}: {e}", path.display()))?;
        let headers = reader.headers()?.clone();
        let col = |name: &str| -> anyhow::Result<usize> {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| anyhow::anyhow!("{} lacks column {name}", path.display()))
        };
        let (c_epochs, c_acc, c_rem) = (
            col("epochs_used")?,
            col("test_accuracy")?,
            col("remaining_total")?,
        );
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record?;
            rows.push((
                record[c_epochs].parse::<f64>()?,
                record[c_acc].parse::<f64>()?,
                record[c_rem].parse::<f64>()?,
            ));
        }
        trials.push(rows);
    }
    let iterations = manifest.iterations;
    if trials.iter().any(|t| t.len() != iterations) {
        anyhow::bail!(
            "{}: trial files disagree with the manifest iteration count",
            dir.display()
        );
    }
    Ok((
        manifest.clone(),
        LoadedRun {
            method: manifest.method_label,
            pq_pair: manifest.pq_label,
            iterations,
            trials,
        },
    ))
}

pub fn cmd_compare(run_dirs: &[std::path::PathBuf], out_dir: &Path) -> anyhow::Result<()> {
    if run_dirs.len() < 2 {
        anyhow::bail!("compare needs at least 2 completed runs, got {}", run_dirs.len());
    }
    let mut runs = Vec::new();
    let mut manifests = Vec::new();
    for dir in run_dirs {
        let (manifest, run) = load_run(dir)?;
        manifests.push(manifest);
        runs.push(run);
    }
    let first = &manifests[0];
    for (dir, m) in run_dirs.iter().zip(&manifests).skip(1) {
        if m.iterations != first.iterations {
            anyhow::bail!(
                "comparison error: {} ran T={} but {} ran T={}",
                run_dirs[0].display(),
                first.iterations,
                dir.display(),
                m.iterations
            );
        }
        if m.dataset_hash != first.dataset_hash {
            anyhow::bail!(
                "comparison error: {} and {} were produced on different datasets",
                run_dirs[0].display(),
                dir.display()
            );
        }
    }

    std::fs::create_dir_all(out_dir)?;
    let mut compare = String::from(COMPARE_HEADER);
    compare.push('\n');
    for run in &runs {
        for (metric, pick) in [
            ("accuracy", 1usize),
            ("epochs_used", 0usize),
            ("remaining_weights", 2usize),
        ] {
            for t in 0..run.iterations {
                let values: Vec<f64> = run
                    .trials
                    .iter()
                    .map(|trial| match pick {
                        0 => trial[t].0,
                        1 => trial[t].1,
                        _ => trial[t].2,
                    })
                    .collect();
                let (mean, std) = mean_std(&values);
                compare.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    run.method,
                    run.pq_pair,
                    t + 1,
                    metric,
                    fmt_f64(mean),
                    fmt_f64(std)
                ));
            }
        }
    }
    std::fs::write(out_dir.join("compare.csv"), compare)?;

    let mut totals = String::from(TOTALS_HEADER);
    totals.push('\n');
    for run in &runs {
        for (trial, rows) in run.trials.iter().enumerate() {
            let total: f64 = rows.iter().map(|r| r.0).sum();
            totals.push_str(&format!(
                "{},{},{},{}\n",
                run.method, run.pq_pair, trial, total as u64
            ));
        }
    }
    std::fs::write(out_dir.join("totals.csv"), totals)?;
    Ok(())
}
