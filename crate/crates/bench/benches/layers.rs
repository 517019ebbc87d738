use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use relnet_core::data::homography::{build_homography, TaskKind};
use relnet_core::data::{warp_image, GrayImage};
use relnet_core::layers::cau::{cau_rankone_backward_batch, cau_rankone_forward_batch};
use relnet_core::layers::loss::mse_loss_batch;
use relnet_core::linalg::{gemm, rng_uniform};
use relnet_core::optim::Optimizer;
use relnet_core::{build_model, FlushDenormals, ModelConfig, ModelKind, Rng, Tensor2D};
use std::hint::black_box;

fn bench_gemm(c: &mut Criterion) {
    let mut rng = Rng::new(0);
    let a: Tensor2D<f32> = rng_uniform(&mut rng, -1.0, 1.0, 100, 121).unwrap();
    let b: Tensor2D<f32> = rng_uniform(&mut rng, -1.0, 1.0, 1200, 121).unwrap();
    c.bench_function("gemm 100x121 * 121x1200", |bench| {
        bench.iter(|| gemm(black_box(&a), black_box(&b), false, true).unwrap())
    });
}

fn bench_cau(c: &mut Criterion) {
    let mut rng = Rng::new(1);
    let u: Tensor2D<f32> = rng_uniform(&mut rng, 0.0001, 0.2, 1200, 121).unwrap();
    let v: Tensor2D<f32> = rng_uniform(&mut rng, 0.0001, 0.2, 1200, 121).unwrap();
    let a: Tensor2D<f32> = rng_uniform(&mut rng, -0.5, 0.5, 100, 121).unwrap();
    let b: Tensor2D<f32> = rng_uniform(&mut rng, -0.5, 0.5, 100, 121).unwrap();
    let g: Tensor2D<f32> = rng_uniform(&mut rng, -1.0, 1.0, 100, 1200).unwrap();
    c.bench_function("cau rank-one forward, batch 100", |bench| {
        bench.iter(|| cau_rankone_forward_batch(&u, &v, black_box(&a), &b).unwrap())
    });
    let (_, cache) = cau_rankone_forward_batch(&u, &v, &a, &b).unwrap();
    c.bench_function("cau rank-one backward, batch 100", |bench| {
        bench.iter(|| cau_rankone_backward_batch(&u, &v, &a, &b, &cache, black_box(&g), false).unwrap())
    });
}

fn bench_train_step(c: &mut Criterion) {
    let _ftz = FlushDenormals::enable();
    let mut group = c.benchmark_group("train step, batch 100");
    for kind in ModelKind::ALL {
        let mut rng = Rng::new(2);
        let mut model = build_model::<f32>(&ModelConfig::standard(kind, 2), &mut rng).unwrap();
        let mut opt = Optimizer::new(model.params(), Default::default());
        let x: Tensor2D<f32> = rng_uniform(&mut rng, -0.5, 0.5, 100, 121).unwrap();
        let y: Tensor2D<f32> = rng_uniform(&mut rng, -0.5, 0.5, 100, 121).unwrap();
        let z: Tensor2D<f32> = rng_uniform(&mut rng, -5.0, 5.0, 100, 2).unwrap();
        group.bench_function(BenchmarkId::from_parameter(kind), |bench| {
            bench.iter(|| {
                let trace = model.forward(&x, &y).unwrap();
                let (_, grad) = mse_loss_batch(trace.output(), &z).unwrap();
                let grads = model.backward(&trace, &grad).unwrap();
                opt.update(model.params_mut(), &grads).unwrap();
            })
        });
    }
    group.finish();
}

fn bench_warp(c: &mut Criterion) {
    let mut rng = Rng::new(3);
    let img = GrayImage::from_fn(32, 32, |_, _| rng.uniform(0.0, 255.0));
    let h = build_homography(TaskKind::Projective, &[0.1, 0.2, -0.1, 0.3, 0.005, -0.004]).unwrap();
    c.bench_function("warp 32x32 projective", |bench| {
        bench.iter(|| warp_image(black_box(&img), &h).unwrap())
    });
}

criterion_group!(benches, bench_gemm, bench_cau, bench_train_step, bench_warp);
criterion_main!(benches);
