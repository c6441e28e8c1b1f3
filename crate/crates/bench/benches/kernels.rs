use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use pimml_bench::{fixed_vectors, linear_dataset, lut_inputs};
use pimml_core::fixedpoint::dot_accumulate;
use pimml_core::kernels::{linreg_train, prepare};
use pimml_core::lut::lut_eval;
use pimml_core::{Algorithm, Hyperparams, LutTable, PimConfig, PimDevice, QFormat, WideAccumulator};

fn dot(c: &mut Criterion) {
    let (a, b) = fixed_vectors(4096);
    c.bench_function("dot_accumulate_4096", |bench| {
        bench.iter(|| dot_accumulate(black_box(&a), black_box(&b), WideAccumulator::for_products(QFormat::Q16_16)))
    });
}

fn lut(c: &mut Criterion) {
    let table = LutTable::sigmoid_default();
    let xs = lut_inputs(4096, -10.0, 10.0);
    c.bench_function("lut_eval_4096", |bench| {
        bench.iter(|| xs.iter().map(|&x| lut_eval(&table, black_box(x)).raw()).sum::<i64>())
    });
}

fn linreg_iteration(c: &mut Criterion) {
    let ds = linear_dataset(16_384, 16);
    let hp = Hyperparams {
        iterations: 1,
        ..Hyperparams::default()
    };
    let mut group = c.benchmark_group("linreg_iteration_16384x16");
    for cores in [1usize, 16, 64] {
        group.bench_function(format!("{cores}_cores"), |bench| {
            bench.iter_batched(
                || {
                    let mut dev = PimDevice::new(PimConfig::with_cores(cores)).unwrap();
                    let images = prepare(&mut dev, &ds, Algorithm::Linreg, &hp).unwrap();
                    (dev, images)
                },
                |(mut dev, images)| linreg_train(&mut dev, &images, &hp).unwrap(),
                BatchSize::LargeInput,
            )
        });
    }
    group.finish();
}

criterion_group!(benches, dot, lut, linreg_iteration);
criterion_main!(benches);
