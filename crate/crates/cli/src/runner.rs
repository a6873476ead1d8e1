//! The `run` command: seeded trials, per-trial CSVs, merged summary,
//! manifest.

use std::path::{Path, PathBuf};
use std::time::Instant;

use sha2::{Digest, Sha256};

use incop::checkpoint::{write_checkpoint, Checkpoint};
use incop::data::Dataset;
use incop::imp::{run_imp, ImpRun, IterationEvent};

use crate::config::{hex_string, ExperimentConfig};
use crate::csvio::{write_epochs_trace_csv, write_iterations_csv, write_summary_csv};
use crate::manifest::{now_unix_ms, RunManifest};

pub struct RunOptions {
    pub jobs: usize,
    pub checkpoint_every: Option<usize>,
    pub seed_override: Option<u64>,
}

/// Content hash over both splits, used to refuse cross-dataset comparisons.
pub fn dataset_hash(dataset: &Dataset) -> String {
    let mut hasher = Sha256::new();
    for t in [&dataset.train_inputs, &dataset.test_inputs] {
        for d in t.shape() {
            hasher.update((*d as u64).to_le_bytes());
        }
        for v in t.data() {
            hasher.update(v.to_le_bytes());
        }
    }
    for l in dataset.train_labels.iter().chain(&dataset.test_labels) {
        hasher.update((*l as u64).to_le_bytes());
    }
    hex_string(&hasher.finalize())
}

fn run_one_trial(
    config: &ExperimentConfig,
    dataset: &Dataset,
    trial: usize,
    trial_dir: &Path,
    options: &RunOptions,
) -> anyhow::Result<ImpRun> {
    std::fs::create_dir_all(trial_dir)?;
    let imp_config = config.imp_config(trial, options.seed_override)?;
    let specs = config.layer_specs(&dataset.input_shape, dataset.num_classes)?;

    let mut hook_error = None;
    let run = {
        let mut hook = |event: &IterationEvent| -> incop::Result<()> {
            if let Some(every) = options.checkpoint_every {
                if every > 0 && event.iteration % every == 0 {
                    let checkpoint = Checkpoint {
                        state: event.network.snapshot(),
                        reference: event.reference.cloned(),
                        current: event.current.cloned(),
                    };
                    let path = trial_dir.join(format!("checkpoint_iter_{}.ckpt", event.iteration));
                    write_checkpoint(&path, &checkpoint)?;
                }
            }
            Ok(())
        };
        run_imp(&imp_config, &specs, dataset, Some(&mut hook)).map_err(|e| {
            hook_error.get_or_insert_with(|| e.to_string());
            e
        })?
    };

    write_iterations_csv(&trial_dir.join("iterations.csv"), &run.records)?;
    write_epochs_trace_csv(&trial_dir.join("epochs_trace.csv"), &run.records)?;
    Ok(run)
}

pub fn cmd_run(config_path: &Path, out_dir: &Path, options: &RunOptions) -> anyhow::Result<()> {
    let config = ExperimentConfig::from_path(config_path)?;
    std::fs::create_dir_all(out_dir)?;
    let dataset = config.load_dataset()?;
    let data_hash = dataset_hash(&dataset);

    let trial_dirs: Vec<PathBuf> = (0..config.trials)
        .map(|i| out_dir.join(format!("trial_{i}")))
        .collect();

    let jobs = options.jobs.max(1).min(config.trials);
    let mut results: Vec<Option<anyhow::Result<(ImpRun, u64)>>> =
        (0..config.trials).map(|_| None).collect();
    if jobs <= 1 {
        for (trial, slot) in results.iter_mut().enumerate() {
            let started = Instant::now();
            let run = run_one_trial(&config, &dataset, trial, &trial_dirs[trial], options);
            *slot = Some(run.map(|r| (r, started.elapsed().as_millis() as u64)));
        }
    } else {
        // fixed-size worker pool over the trial queue; per-trial outputs are
        // independent files, merging happens single-threaded afterward
        let next = std::sync::atomic::AtomicUsize::new(0);
        let slots: Vec<std::sync::Mutex<Option<anyhow::Result<(ImpRun, u64)>>>> =
            (0..config.trials).map(|_| std::sync::Mutex::new(None)).collect();
        std::thread::scope(|scope| {
            for _ in 0..jobs {
                scope.spawn(|| loop {
                    let trial = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                    if trial >= config.trials {
                        break;
                    }
                    let started = Instant::now();
                    let run = run_one_trial(&config, &dataset, trial, &trial_dirs[trial], options);
                    *slots[trial].lock().unwrap() =
                        Some(run.map(|r| (r, started.elapsed().as_millis() as u64)));
                });
            }
        });
        for (slot, result) in results.iter_mut().zip(slots) {
            *slot = result.into_inner().unwrap();
        }
    }

    let mut runs = Vec::with_capacity(config.trials);
    let mut wall = Vec::with_capacity(config.trials);
    for result in results.into_iter() {
        let (run, ms) = result.expect("all trials executed")?;
        runs.push(run);
        wall.push(ms);
    }

    write_summary_csv(
        &out_dir.join("summary.csv"),
        &runs.iter().map(|r| r.records.clone()).collect::<Vec<_>>(),
    )?;

    let mut output_files: Vec<String> = vec!["summary.csv".into()];
    for i in 0..config.trials {
        output_files.push(format!("trial_{i}/iterations.csv"));
        output_files.push(format!("trial_{i}/epochs_trace.csv"));
    }
    let base_seed = options.seed_override.unwrap_or(config.seed);
    RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: config.hash(),
        dataset_hash: data_hash,
        method_label: config.method_label(),
        pq_label: config.pq_label(),
        iterations: config.prune.iterations,
        epoch_budget: config.train.epochs,
        trials: config.trials,
        trial_seeds: (0..config.trials)
            .map(|i| base_seed.wrapping_add(i as u64))
            .collect(),
        reference_accuracy: runs.iter().map(|r| r.reference_accuracy).collect(),
        output_files,
        created_unix_ms: now_unix_ms(),
        wall_ms_per_trial: wall,
    }
    .save(out_dir)?;
    Ok(())
}
