//! Hot-loop benchmarks.
//!
//! Run `cargo bench -p tfsynth-core -- --save-baseline parallel` and then
//! `cargo bench -p tfsynth-core --no-default-features -- --baseline parallel`
//! to compare the rayon data-parallel kernels against the sequential
//! fallback; the numbers are bit-identical, only the wall time differs.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tfsynth_core::image::batch_tensor;
use tfsynth_core::metrics;
use tfsynth_core::ndtensor::{conv2d, BnMode, Tape, Tensor};
use tfsynth_core::phantoms;
use tfsynth_core::sparse_approx::{threshold_fraction, ThresholdPlan};
use tfsynth_core::tfunet::{self, ArchConfig};
use tfsynth_core::training;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn bench_conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = rand_tensor(&mut rng, vec![8, 8, 64, 64]);
    let k = rand_tensor(&mut rng, vec![16, 8, 3, 3]);
    let b = rand_tensor(&mut rng, vec![16]);
    c.bench_function("conv2d_fwd_8x8x64x64_to_16", |bch| {
        bch.iter(|| conv2d(black_box(&x), black_box(&k), black_box(&b), 1, 1).unwrap())
    });

    c.bench_function("conv2d_fwd_bwd_8x8x64x64_to_16", |bch| {
        bch.iter(|| {
            let mut tape = Tape::new();
            let xv = tape.leaf(x.clone());
            let kv = tape.leaf(k.clone());
            let bv = tape.leaf(b.clone());
            let y = tape.conv2d(xv, kv, bv, 1, 1).unwrap();
            let s = tape.l2_norm_squared(y);
            tape.backward(s).unwrap()
        })
    });
}

fn bench_haar(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = rand_tensor(&mut rng, vec![8, 8, 64, 64]);
    c.bench_function("haar_roundtrip_8x8x64x64", |bch| {
        bch.iter(|| {
            let (l, h, v, d) = tfsynth_core::haar::analysis(black_box(&x)).unwrap();
            tfsynth_core::haar::synthesis(&l, &h, &v, &d).unwrap()
        })
    });
}

fn bench_training_step(c: &mut Criterion) {
    let arch = ArchConfig::reference(false);
    let params = tfunet::init_params(&arch, 3).unwrap();
    let images = phantoms::generate_dataset(8, 64, 5).unwrap();
    let views: Vec<_> = images.iter().collect();
    let batch = batch_tensor(&views).unwrap();
    let w = [0.5, 0.25, 0.125];
    let mut group = c.benchmark_group("training");
    group.sample_size(10);
    group.bench_function("loss_and_gradients_batch8_64x64", |bch| {
        bch.iter(|| training::loss(black_box(&params), black_box(&batch), 1e-7, &w).unwrap())
    });
    group.finish();
}

fn bench_inference(c: &mut Criterion) {
    let arch = ArchConfig::reference(true);
    let params = tfunet::init_params(&arch, 7).unwrap();
    let img = phantoms::generate_dataset(1, 64, 9).unwrap().remove(0);
    let x = img.to_tensor();
    let pyr = tfunet::encode(&params, &x, BnMode::Eval).unwrap();
    let mut group = c.benchmark_group("inference");
    group.bench_function("autoencode_1x64x64", |bch| {
        bch.iter(|| tfunet::autoencode(black_box(&params), black_box(&x), BnMode::Eval).unwrap())
    });
    group.bench_function("threshold_fraction_p085", |bch| {
        bch.iter(|| threshold_fraction(black_box(&pyr), &ThresholdPlan::new(0.85)).unwrap())
    });
    group.finish();
}

fn bench_metrics_and_phantoms(c: &mut Criterion) {
    let a = phantoms::generate_dataset(1, 64, 11).unwrap().remove(0);
    let b = phantoms::generate_dataset(1, 64, 13).unwrap().remove(0);
    c.bench_function("ssim_64x64", |bch| {
        bch.iter(|| metrics::ssim(black_box(&a), black_box(&b)).unwrap())
    });
    c.bench_function("generate_dataset_32_images_64x64", |bch| {
        bch.iter(|| phantoms::generate_dataset(32, 64, black_box(17)).unwrap())
    });
}

criterion_group!(
    benches,
    bench_conv,
    bench_haar,
    bench_training_step,
    bench_inference,
    bench_metrics_and_phantoms
);
criterion_main!(benches);
