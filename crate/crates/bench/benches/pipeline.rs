use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use kernel_mor_core::balancing::{kernel_balance, truncate};
use kernel_mor_core::gramians::GramianDataset;
use kernel_mor_core::kernels::{gram_matrix, KernelSpec};
use kernel_mor_core::reduced::{dynamics_dataset, output_dataset, DynamicsModel, JacobianMode, ReducedSystem, Refresh};
use kernel_mor_core::rkhs::{log_grid, rls_fit, select_lambda};
use kernel_mor_core::systems::{integrate, Benchmark7d};
use kernel_mor_core::{Signal, TimeGrid, ToleranceConfig};
use nalgebra::DVector;

fn dataset(samples: usize) -> GramianDataset {
    GramianDataset::collect(&Benchmark7d, &TimeGrid::new(5.0, samples, 10).unwrap()).unwrap()
}

fn gram(c: &mut Criterion) {
    let ds = dataset(800);
    let k = KernelSpec::polynomial(3);
    c.bench_function("gram_matrix poly3 800x800", |b| b.iter(|| gram_matrix(&k, black_box(&ds.ctrl_samples)).unwrap()));
}

fn balance(c: &mut Criterion) {
    let mut group = c.benchmark_group("kernel_balance");
    group.sample_size(10);
    for samples in [200, 400] {
        let ds = dataset(samples);
        let tol = ToleranceConfig::default();
        group.bench_function(format!("benchmark_7d L={samples}"), |b| {
            b.iter(|| kernel_balance(black_box(&ds), &KernelSpec::polynomial(3), &tol).unwrap())
        });
    }
    group.finish();
}

fn learn_and_simulate(c: &mut Criterion) {
    let tol = ToleranceConfig::default();
    let br = truncate(&kernel_balance(&dataset(200), &KernelSpec::polynomial(3), &tol).unwrap(), 2).unwrap();
    let grid = TimeGrid::new(5.0, 500, 5).unwrap();
    let traj = integrate(&Benchmark7d, &DVector::zeros(7), &[Signal::square(10.0)], &grid).unwrap();
    let ds = dynamics_dataset(&Benchmark7d, &br, &traj, true).unwrap();
    let lambdas = log_grid(-10.0, 2.0, 25);

    let mut group = c.benchmark_group("learn");
    group.sample_size(10);
    group.bench_function("select_lambda 500 points x 25 values", |b| {
        b.iter(|| select_lambda(black_box(&ds), &KernelSpec::polynomial(3), &lambdas).unwrap())
    });
    group.finish();

    let f = rls_fit(&ds, &KernelSpec::polynomial(3), 1e-6).unwrap();
    let h = rls_fit(&output_dataset(&br, &traj, true).unwrap(), &KernelSpec::polynomial(3), 1e-6).unwrap();
    let rs = ReducedSystem::new(
        br,
        DynamicsModel::Joint(f),
        h,
        JacobianMode::Taylor { expansion: DVector::zeros(7), refresh: Refresh::Never },
        tol,
    )
    .unwrap();
    let eval = TimeGrid::new(1.0, 200, 5).unwrap();
    let u = [Signal::sum(vec![Signal::sine(3.0), Signal::square(5.0)]).scaled(0.5)];
    let mut group = c.benchmark_group("reduced");
    group.sample_size(10);
    group.bench_function("simulate 1000 RK4 steps", |b| {
        b.iter(|| rs.simulate(&DVector::zeros(2), black_box(&u), &eval).unwrap())
    });
    group.finish();
}

criterion_group!(benches, gram, balance, learn_and_simulate);
criterion_main!(benches);
