mod common;

use common::oracles::{off_diagonal_norm, random_spd, rng, uniform};
use kernel_mor_core::balancing::{auto_gap_order, balance_pair, gap_ratios, kernel_balance, truncate};
use kernel_mor_core::gramians::{empirical_gramians, linear_balance, GramianDataset};
use kernel_mor_core::kernels::KernelSpec;
use kernel_mor_core::systems::{Benchmark7d, LinearSystem};
use kernel_mor_core::{TimeGrid, ToleranceConfig};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn exact() -> ToleranceConfig {
    ToleranceConfig::default().with_jitter(0.0)
}

#[test]
fn fifty_random_pairs_are_balanced() {
    let mut r = rng(606);
    for case in 0..50 {
        let n = 2 + case % 9;
        let p = random_spd(n, 0.01, 10.0, &mut r);
        let q = random_spd(n, 0.01, 10.0, &mut r);
        let pb = balance_pair(&p, &q, &exact()).unwrap();
        assert_eq!(pb.rank(), n);
        let sigma = DMatrix::from_diagonal(&pb.hankel);
        let bound = 1e-6 * sigma.norm();
        let tpt = &pb.transform * &p * pb.transform.transpose();
        let tqt = &pb.inverse_transpose * &q * pb.inverse_transpose.transpose();
        for (name, m) in [("T P Tᵀ", &tpt), ("T^-ᵀ Q T^-1", &tqt)] {
            assert!(off_diagonal_norm(m) <= bound, "case {case} {name}: {}", off_diagonal_norm(m));
            assert!((m.diagonal() - &pb.hankel).amax() <= bound, "case {case} {name} diagonal");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn low_rank_pairs_balance_on_their_support(seed in any::<u64>(), n in 3usize..9, k in 1usize..3) {
        let mut r = rng(seed);
        let f = uniform(n, k, &mut r);
        let p = &f * f.transpose();
        let q = random_spd(n, 0.1, 2.0, &mut r);
        let pb = balance_pair(&p, &q, &exact()).unwrap();
        prop_assert_eq!(pb.rank(), k);
        let sigma = DMatrix::from_diagonal(&pb.hankel);
        let tpt = &pb.transform * &p * pb.transform.transpose();
        let tqt = &pb.inverse_transpose * &q * pb.inverse_transpose.transpose();
        prop_assert!((&tpt - &sigma).norm() <= 1e-6 * sigma.norm());
        prop_assert!((&tqt - &sigma).norm() <= 1e-6 * sigma.norm());
    }

    #[test]
    fn hankel_values_are_descending_and_nonnegative(seed in any::<u64>(), n in 1usize..8) {
        let mut r = rng(seed);
        let pb = balance_pair(&random_spd(n, 0.0, 4.0, &mut r), &random_spd(n, 0.0, 4.0, &mut r), &exact()).unwrap();
        prop_assert!(pb.hankel.iter().all(|&v| v >= 0.0));
        for w in pb.hankel.as_slice().windows(2) {
            prop_assert!(w[0] >= w[1]);
        }
    }
}

fn permuted(ds: &GramianDataset, seed: u64) -> GramianDataset {
    let mut r = rng(seed);
    let mut shuffle = |count: usize| {
        let mut idx: Vec<usize> = (0..count).collect();
        rand::seq::SliceRandom::shuffle(idx.as_mut_slice(), &mut r);
        idx
    };
    let mut out = ds.clone();
    out.ctrl_samples = ds.ctrl_samples.select_columns(&shuffle(ds.ctrl_samples.ncols()));
    out.obs_samples = ds.obs_samples.select_columns(&shuffle(ds.obs_samples.ncols()));
    out
}

#[test]
fn hankel_values_ignore_sample_order() {
    let ds = GramianDataset::collect(&Benchmark7d, &TimeGrid::new(5.0, 200, 10).unwrap()).unwrap();
    let tol = ToleranceConfig::default();
    for kernel in [KernelSpec::polynomial(3), KernelSpec::Gaussian { gamma: 2.0 }, KernelSpec::Linear] {
        let base = kernel_balance(&ds, &kernel, &tol).unwrap().hankel;
        for seed in 0..3 {
            let other = kernel_balance(&permuted(&ds, seed), &kernel, &tol).unwrap().hankel;
            let r = base.len().min(other.len());
            for k in 0..r {
                let (a, b) = (base[k], other[k]);
                if a >= 1e-4 * base[0] {
                    assert!((a - b).abs() <= 1e-8 * a, "{kernel:?} value {k}: {base} vs {other}");
                } else {
                    // near the rank cutoff Σ² is resolved only to roundoff of σ₁²
                    assert!((a * a - b * b).abs() <= 1e-12 * base[0] * base[0], "{kernel:?} value {k}");
                }
            }
        }
    }
}

#[test]
fn reduction_is_equivariant_under_sample_order() {
    let ds = GramianDataset::collect(&Benchmark7d, &TimeGrid::new(5.0, 150, 10).unwrap()).unwrap();
    let tol = ToleranceConfig::default();
    let kernel = KernelSpec::polynomial(3);
    let a = truncate(&kernel_balance(&ds, &kernel, &tol).unwrap(), 2).unwrap();
    let b = truncate(&kernel_balance(&permuted(&ds, 9), &kernel, &tol).unwrap(), 2).unwrap();
    let x = [0.2, -0.1, 0.05, 0.3, 0.0, -0.2, 0.1];
    let (pa, pb) = (a.reduce(&x).unwrap(), b.reduce(&x).unwrap());
    // balanced coordinates are defined up to the sign of each direction
    for k in 0..2 {
        assert!((pa[k].abs() - pb[k].abs()).abs() <= 1e-6 * pa.norm(), "{pa} vs {pb}");
    }
}

#[test]
fn linear_kernel_reproduces_moore_hankel_values() {
    for seed in [1u64, 2, 3] {
        let sys = LinearSystem::random_stable(3 + seed as usize, 2, 1, 0.5, seed);
        let ds = GramianDataset::collect(&sys, &TimeGrid::new(10.0, 300, 1).unwrap()).unwrap();
        let moore = linear_balance(&empirical_gramians(&ds).unwrap(), &exact()).unwrap().hankel;
        let kernel = kernel_balance(&ds, &KernelSpec::Linear, &exact()).unwrap().hankel;
        assert!(kernel.len() <= moore.len());
        for k in 0..kernel.len() {
            assert!((kernel[k] - moore[k]).abs() <= 1e-6 * moore[k], "seed {seed} value {k}");
        }
    }
}

#[test]
fn linear_kernel_reduction_is_moore_projection() {
    let sys = LinearSystem::random_stable(4, 1, 1, 0.5, 12);
    let ds = GramianDataset::collect(&sys, &TimeGrid::new(10.0, 300, 1).unwrap()).unwrap();
    let lb = linear_balance(&empirical_gramians(&ds).unwrap(), &exact()).unwrap();
    let br = truncate(&kernel_balance(&ds, &KernelSpec::Linear, &exact()).unwrap(), 2).unwrap();
    let mut r = rng(3);
    for _ in 0..10 {
        let x = uniform(4, 1, &mut r);
        let pi = br.reduce(x.as_slice()).unwrap();
        let moore = lb.transform.rows(0, 2) * &x;
        for k in 0..2 {
            assert!((pi[k].abs() - moore[(k, 0)].abs()).abs() <= 1e-6 * moore.norm());
        }
    }
}

#[test]
fn reduction_has_requested_dimension() {
    let ds = GramianDataset::collect(&Benchmark7d, &TimeGrid::new(5.0, 100, 10).unwrap()).unwrap();
    let kb = kernel_balance(&ds, &KernelSpec::polynomial(3), &ToleranceConfig::default()).unwrap();
    for q in 1..=3 {
        let br = truncate(&kb, q).unwrap();
        assert_eq!(br.reduce(&[0.1; 7]).unwrap().len(), q);
        assert_eq!(br.jacobian_of_pi(&[0.1; 7]).unwrap().shape(), (q, 7));
    }
    assert!(truncate(&kb, 0).is_err());
    assert!(truncate(&kb, kb.hankel.len() + 1).is_err());
}

#[test]
fn gap_order_finds_the_largest_drop() {
    let h = DVector::from_vec(vec![10.0, 8.0, 0.1, 0.05]);
    assert_eq!(gap_ratios(&h), vec![1.25, 80.0, 2.0]);
    assert_eq!(auto_gap_order(&h, 10.0), 2);
}
