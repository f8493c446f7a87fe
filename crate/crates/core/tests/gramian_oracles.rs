mod common;

use common::oracles::{lyapunov, lyapunov_hankel, off_diagonal_norm, random_spd, rng};
use kernel_mor_core::gramians::{empirical_gramians, linear_balance, EmpiricalGramianPair, GramianDataset};
use kernel_mor_core::kernels::{gram_matrix, KernelSpec};
use kernel_mor_core::numerics::SymmetricSpectrum;
use kernel_mor_core::systems::{impulse_response, observability_response, Benchmark7d, LinearSystem};
use kernel_mor_core::{TimeGrid, ToleranceConfig};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn exact() -> ToleranceConfig {
    ToleranceConfig::default().with_jitter(0.0)
}

#[test]
fn sample_layout_matches_raw_trajectories() {
    let sys = LinearSystem::random_stable(4, 2, 3, 0.5, 8);
    let grid = TimeGrid::new(3.0, 60, 4).unwrap();
    let ds = GramianDataset::collect(&sys, &grid).unwrap();
    assert_eq!(ds.ctrl_samples.ncols(), 60 * 2);
    assert_eq!(ds.obs_samples.ncols(), 60 * 3);
    let impulses: Vec<_> = (0..2).map(|i| impulse_response(&sys, i, &grid).unwrap()).collect();
    let ics: Vec<_> = (0..4).map(|k| observability_response(&sys, k, &grid).unwrap()).collect();
    for i in 0..60 {
        for j in 0..2 {
            assert_eq!(ds.ctrl_samples.column(i * 2 + j), impulses[j].states.column(i));
        }
        for j in 0..3 {
            for k in 0..4 {
                assert_eq!(ds.obs_samples[(k, i * 3 + j)], ics[k].outputs[(j, i)]);
            }
        }
    }
}

#[test]
fn controllability_gramian_matches_product_form() {
    let sys = LinearSystem::random_stable(5, 2, 2, 0.3, 21);
    let grid = TimeGrid::new(4.0, 200, 2).unwrap();
    let ds = GramianDataset::collect(&sys, &grid).unwrap();
    let g = empirical_gramians(&ds).unwrap();
    let impulses: Vec<_> = (0..2).map(|i| impulse_response(&sys, i, &grid).unwrap()).collect();
    let mut wc = DMatrix::zeros(5, 5);
    for i in 0..grid.samples {
        let x = DMatrix::from_fn(5, 2, |r, c| impulses[c].states[(r, i)]);
        wc += &x * x.transpose();
    }
    wc *= grid.t_final / (2.0 * grid.samples as f64);
    assert!((&g.controllability - &wc).norm() <= 1e-13 * wc.norm());
}

#[test]
fn empirical_gramians_are_symmetric_psd() {
    let ds = GramianDataset::collect(&Benchmark7d, &TimeGrid::new(5.0, 300, 10).unwrap()).unwrap();
    let g = empirical_gramians(&ds).unwrap();
    for w in [&g.controllability, &g.observability] {
        let norm = w.norm();
        assert!((w - w.transpose()).norm() <= 1e-10 * norm);
        assert!(SymmetricSpectrum::new(w).unwrap().min() >= -1e-10 * norm);
    }
}

#[test]
fn controllability_spectrum_equals_scaled_linear_gram_spectrum() {
    let ds = GramianDataset::collect(&Benchmark7d, &TimeGrid::new(5.0, 200, 10).unwrap()).unwrap();
    let g = empirical_gramians(&ds).unwrap();
    let gram = gram_matrix(&KernelSpec::Linear, &ds.ctrl_samples).unwrap() * ds.ctrl_scale();
    let small = SymmetricSpectrum::new(&g.controllability).unwrap().values;
    let big = SymmetricSpectrum::new(&gram).unwrap().values;
    let top = small[0];
    for k in 0..small.len() {
        if small[k] > 1e-10 * top {
            assert!((small[k] - big[k]).abs() <= 1e-8 * small[k], "{k}: {} vs {}", small[k], big[k]);
        }
    }
    for v in big.iter().skip(small.len()) {
        assert!(v.abs() <= 1e-10 * top);
    }
}

#[test]
fn lyapunov_oracle_solves_its_equation() {
    let sys = LinearSystem::random_stable(5, 2, 1, 0.4, 4);
    let q = &sys.b * sys.b.transpose();
    let w = lyapunov(&sys.a, &q);
    let residual = &sys.a * &w + &w * sys.a.transpose() + &q;
    assert!(residual.norm() <= 1e-10 * q.norm());
}

fn moore_hankel(sys: &LinearSystem, grid: &TimeGrid) -> Vec<f64> {
    let ds = GramianDataset::collect(sys, grid).unwrap();
    linear_balance(&empirical_gramians(&ds).unwrap(), &exact())
        .unwrap()
        .hankel
        .iter()
        .copied()
        .collect()
}

#[test]
fn moore_balancing_converges_to_lyapunov_balancing() {
    let sys = LinearSystem::random_stable(4, 1, 1, 0.5, 42);
    let reference = lyapunov_hankel(&sys.a, &sys.b, &sys.c);
    let worst = |h: &[f64]| {
        h.iter()
            .zip(&reference)
            .take(3)
            .map(|(a, b)| (a - b).abs() / b)
            .fold(0.0, f64::max)
    };
    let coarse = worst(&moore_hankel(&sys, &TimeGrid::new(20.0, 500, 1).unwrap()));
    let fine = worst(&moore_hankel(&sys, &TimeGrid::new(20.0, 4000, 1).unwrap()));
    assert!(fine < coarse, "{fine} !< {coarse}");
    assert!(fine <= 0.02, "{fine}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn linear_balance_diagonalizes_random_spd_pairs(seed in any::<u64>(), n in 1usize..7) {
        let mut r = rng(seed);
        let g = EmpiricalGramianPair {
            controllability: random_spd(n, 0.05, 3.0, &mut r),
            observability: random_spd(n, 0.05, 3.0, &mut r),
            ctrl_scale: 1.0,
            obs_scale: 1.0,
        };
        let lb = linear_balance(&g, &exact()).unwrap();
        let sigma = DMatrix::from_diagonal(&lb.hankel);
        let wc = &lb.transform * &g.controllability * lb.transform.transpose();
        let wo = lb.inverse.transpose() * &g.observability * &lb.inverse;
        let scale = sigma.norm();
        prop_assert!((&wc - &sigma).norm() <= 1e-8 * scale);
        prop_assert!((&wo - &sigma).norm() <= 1e-8 * scale);
        prop_assert!(off_diagonal_norm(&wc) <= 1e-8 * scale);
        prop_assert!((&lb.transform * &lb.inverse - DMatrix::identity(n, n)).norm() <= 1e-8);
        for w in lb.hankel.as_slice().windows(2) {
            prop_assert!(w[0] >= w[1]);
        }
    }

    #[test]
    fn dataset_csv_round_trips_byte_for_byte(seed in 0u64..1000, n in 1usize..4, samples in 2usize..20) {
        let sys = LinearSystem::random_stable(n, 2, 1, 0.5, seed);
        let grid = TimeGrid::new(1.0, samples, 2).unwrap();
        let ds = GramianDataset::collect(&sys, &grid).unwrap();
        let mut first = Vec::new();
        ds.write_csv(&mut first).unwrap();
        let back = GramianDataset::read_csv(first.as_slice(), &grid).unwrap();
        prop_assert_eq!(&back.ctrl_samples, &ds.ctrl_samples);
        prop_assert_eq!(&back.obs_samples, &ds.obs_samples);
        let mut second = Vec::new();
        back.write_csv(&mut second).unwrap();
        prop_assert_eq!(first, second);
    }
}
