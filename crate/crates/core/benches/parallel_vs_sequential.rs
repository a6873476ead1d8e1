//! Sequential vs rayon kernel drivers on the shapes the experiments use.
//!
//! Run with `cargo bench -p incop`. The `parallel` feature (default) is
//! required so both drivers are compiled; outputs are bit-identical, the
//! benches only compare throughput.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use incop::kernels::{self, ConvDims};
use incop::layer::Activation;

fn randn(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn bench_dense(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    // the experiment workhorse: batch 64 through a 784 -> 128 layer
    let (batch, in_dim, out_dim) = (64, 784, 128);
    let x = randn(&mut rng, batch * in_dim);
    let w = randn(&mut rng, out_dim * in_dim);
    let b = randn(&mut rng, out_dim);
    let dz = randn(&mut rng, batch * out_dim);

    let mut group = c.benchmark_group("dense_forward");
    group.bench_function(BenchmarkId::new("seq", "64x784x128"), |bench| {
        let mut out = vec![0.0; batch * out_dim];
        bench.iter(|| {
            kernels::seq::dense_forward(&x, batch, in_dim, &w, out_dim, &b, Activation::Relu, &mut out)
        });
    });
    group.bench_function(BenchmarkId::new("par", "64x784x128"), |bench| {
        let mut out = vec![0.0; batch * out_dim];
        bench.iter(|| {
            kernels::par::dense_forward(&x, batch, in_dim, &w, out_dim, &b, Activation::Relu, &mut out)
        });
    });
    group.finish();

    let mut group = c.benchmark_group("dense_grad_weights");
    group.bench_function(BenchmarkId::new("seq", "64x784x128"), |bench| {
        let mut dw = vec![0.0; out_dim * in_dim];
        bench.iter(|| kernels::seq::dense_grad_weights(&dz, &x, batch, out_dim, in_dim, &mut dw));
    });
    group.bench_function(BenchmarkId::new("par", "64x784x128"), |bench| {
        let mut dw = vec![0.0; out_dim * in_dim];
        bench.iter(|| kernels::par::dense_grad_weights(&dz, &x, batch, out_dim, in_dim, &mut dw));
    });
    group.finish();
}

fn bench_conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let d = ConvDims {
        batch: 16,
        in_channels: 1,
        in_h: 28,
        in_w: 28,
        out_channels: 6,
        kernel_h: 5,
        kernel_w: 5,
    };
    let x = randn(&mut rng, d.batch * d.in_sample());
    let w = randn(&mut rng, d.out_channels * d.kernel_size());
    let b = randn(&mut rng, d.out_channels);

    let mut group = c.benchmark_group("conv_forward");
    group.bench_function(BenchmarkId::new("seq", "16x1x28x28"), |bench| {
        let mut out = vec![0.0; d.batch * d.out_sample()];
        bench.iter(|| kernels::seq::conv_forward(&x, &w, &b, Activation::Relu, &d, &mut out));
    });
    group.bench_function(BenchmarkId::new("par", "16x1x28x28"), |bench| {
        let mut out = vec![0.0; d.batch * d.out_sample()];
        bench.iter(|| kernels::par::conv_forward(&x, &w, &b, Activation::Relu, &d, &mut out));
    });
    group.finish();
}

fn bench_training_epoch(c: &mut Criterion) {
    use incop::data::synthetic_dataset;
    use incop::imp::{run_imp, ImpConfig, PruneMethod, RewindTo, StoppingCriterion};
    use incop::mlp_specs;
    use incop::network::SgdConfig;

    let dataset = synthetic_dataset(5, 64, 40, 3, 6.0).unwrap();
    let config = ImpConfig {
        iterations: 1,
        max_epochs: 2,
        finetune_epochs: 0,
        method: PruneMethod::Lth { rate: 0.2 },
        stopping: StoppingCriterion::FixedEpochs { epochs: 2 },
        sgd: SgdConfig {
            learning_rate: 0.05,
            momentum: 0.9,
            weight_decay: 0.0,
            batch_size: 32,
        },
        seed: 7,
        trials: 1,
        probe_size: 32,
        probe_seed: 7,
        rewind: RewindTo::None,
        prune_stalled_layers: true,
    };
    let specs = mlp_specs(64, &[32], 5);
    c.bench_function("small_imp_run", |bench| {
        bench.iter(|| run_imp(&config, &specs, &dataset, None).unwrap());
    });
}

criterion_group!(benches, bench_dense, bench_conv, bench_training_epoch);
criterion_main!(benches);
