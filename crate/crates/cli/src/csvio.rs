//! CSV emission and aggregation.
//!
//! All files are UTF-8, comma-separated, with a header row; reals use `.`
//! decimals at 17 significant digits so values round-trip exactly and
//! reruns are byte-identical. Wall times never appear here (manifest only).

use std::path::Path;

use incop::imp::IterationRecord;

/// 17 significant digits; round-trips any f64 bit pattern we produce.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn iterations_header(layers: usize) -> String {
    let mut cols = vec![
        "iteration".to_string(),
        "epochs_used".to_string(),
        "test_accuracy".to_string(),
        "train_loss".to_string(),
        "remaining_total".to_string(),
    ];
    cols.extend((0..layers).map(|l| format!("remaining_layer_{l}")));
    cols.extend((0..layers).map(|l| format!("pruned_layer_{l}")));
    cols.join(",")
}

pub fn write_iterations_csv(path: &Path, records: &[IterationRecord]) -> anyhow::Result<()> {
    let layers = records
        .first()
        .map(|r| r.remaining_per_layer.len())
        .unwrap_or(0);
    let mut out = String::new();
    out.push_str(&iterations_header(layers));
    out.push('\n');
    for r in records {
        let mut cols = vec![
            r.iteration.to_string(),
            r.epochs_used.to_string(),
            fmt_f64(r.test_accuracy),
            fmt_f64(r.train_loss),
            r.remaining_total.to_string(),
        ];
        cols.extend(r.remaining_per_layer.iter().map(|v| v.to_string()));
        cols.extend(r.pruned_per_layer.iter().map(|v| v.to_string()));
        out.push_str(&cols.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub const EPOCHS_TRACE_HEADER: &str = "iteration,epoch,flow_distance,test_accuracy";

pub fn write_epochs_trace_csv(path: &Path, records: &[IterationRecord]) -> anyhow::Result<()> {
    let mut out = String::new();
    out.push_str(EPOCHS_TRACE_HEADER);
    out.push('\n');
    for r in records {
        for (e, (d, a)) in r
            .flow_distance_trace
            .iter()
            .zip(&r.accuracy_trace)
            .enumerate()
        {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.iteration,
                e + 1,
                fmt_f64(*d),
                fmt_f64(*a)
            ));
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub const SUMMARY_HEADER: &str = "iteration,epochs_used_mean,epochs_used_std,test_accuracy_mean,test_accuracy_std,train_loss_mean,train_loss_std,remaining_total_mean,remaining_total_std";

/// Sample mean and standard deviation (n-1 denominator; 0 for one value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Merge per-trial records (all trials must share the iteration count).
pub fn write_summary_csv(path: &Path, trials: &[Vec<IterationRecord>]) -> anyhow::Result<()> {
    let iterations = trials.first().map(|t| t.len()).unwrap_or(0);
    if trials.iter().any(|t| t.len() != iterations) {
        anyhow::bail!("trials disagree on iteration count");
    }
    let mut out = String::new();
    out.push_str(SUMMARY_HEADER);
    out.push('\n');
    for t in 0..iterations {
        let collect = |f: &dyn Fn(&IterationRecord) -> f64| -> Vec<f64> {
            trials.iter().map(|records| f(&records[t])).collect()
        };
        let (em, es) = mean_std(&collect(&|r| r.epochs_used as f64));
        let (am, as_) = mean_std(&collect(&|r| r.test_accuracy));
        let (lm, ls) = mean_std(&collect(&|r| r.train_loss));
        let (rm, rs) = mean_std(&collect(&|r| r.remaining_total as f64));
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            t + 1,
            fmt_f64(em),
            fmt_f64(es),
            fmt_f64(am),
            fmt_f64(as_),
            fmt_f64(lm),
            fmt_f64(ls),
            fmt_f64(rm),
            fmt_f64(rs)
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}
