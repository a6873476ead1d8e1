//! The `gen-data` command: materialize the configured synthetic dataset as
//! IDX files (MNIST file naming), so the same data can be reloaded through
//! the image path or shared between machines.
//!
//! IDX payloads are bytes, so values are min-max scaled to [0, 1] (over
//! both splits) and quantized to the /255 grid; reloading the files is then
//! bit-exact against the quantized tensors.

use std::path::Path;

use incop::data::save_idx;
use incop::tensor::Tensor;

use crate::config::ExperimentConfig;

pub fn cmd_gen_data(config_path: &Path, out_dir: &Path) -> anyhow::Result<()> {
    let config = ExperimentConfig::from_path(config_path)?;
    if config.dataset.name != "synthetic" {
        anyhow::bail!("config field `dataset.name`: gen-data only materializes synthetic datasets");
    }
    std::fs::create_dir_all(out_dir)?;
    // raw generator output (no standardization; that happens at load time)
    let dataset = incop::data::synthetic_dataset(
        config.dataset.classes.unwrap(),
        config.dataset.dims.unwrap(),
        config.dataset.samples_per_class.unwrap(),
        config.dataset.data_seed,
        config.dataset.margin.unwrap(),
    )?;

    let lo = dataset
        .train_inputs
        .data()
        .iter()
        .chain(dataset.test_inputs.data())
        .fold(f64::INFINITY, |m, &v| m.min(v));
    let hi = dataset
        .train_inputs
        .data()
        .iter()
        .chain(dataset.test_inputs.data())
        .fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let span = (hi - lo).max(f64::MIN_POSITIVE);

    let quantize = |t: &Tensor| -> Tensor {
        let data: Vec<f64> = t
            .data()
            .iter()
            .map(|&v| ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) / 255.0)
            .collect();
        let (rows, cols) = image_dims(t.row_len());
        Tensor::new(vec![t.rows(), rows, cols], data).expect("shape preserved")
    };

    save_idx(
        &out_dir.join("train-images-idx3-ubyte"),
        &out_dir.join("train-labels-idx1-ubyte"),
        &quantize(&dataset.train_inputs),
        &dataset.train_labels,
    )?;
    save_idx(
        &out_dir.join("t10k-images-idx3-ubyte"),
        &out_dir.join("t10k-labels-idx1-ubyte"),
        &quantize(&dataset.test_inputs),
        &dataset.test_labels,
    )?;
    println!(
        "wrote {} train and {} test samples to {}",
        dataset.train_len(),
        dataset.test_len(),
        out_dir.display()
    );
    Ok(())
}

/// Square image dims when the feature count is a perfect square, else 1 x n.
fn image_dims(features: usize) -> (usize, usize) {
    let side = (features as f64).sqrt() as usize;
    if side * side == features {
        (side, side)
    } else {
        (1, features)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_dims_square_or_flat() {
        assert_eq!(image_dims(784), (28, 28));
        assert_eq!(image_dims(10), (1, 10));
    }
}
