//! Independent reference computations used by the tests.

#![allow(dead_code)]

use kernel_mor_core::kernels::KernelSpec;
use kernel_mor_core::rkhs::RegressionDataset;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Solves `A X + X Aᵀ + Q = 0` through the Kronecker form `(I ⊗ A + A ⊗ I) vec(X) = −vec(Q)`.
pub fn lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let op = eye.kronecker(a) + a.kronecker(&eye);
    let rhs = -DVector::from_column_slice(q.as_slice());
    let x = op.lu().solve(&rhs).expect("stable A gives a nonsingular Lyapunov operator");
    let x = DMatrix::from_column_slice(n, n, x.as_slice());
    (&x + x.transpose()) * 0.5
}

/// Hankel values `sqrt(eig(W_c W_o))` of a stable LTI system from its Lyapunov Gramians, descending.
pub fn lyapunov_hankel(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>) -> Vec<f64> {
    let wc = lyapunov(a, &(b * b.transpose()));
    let wo = lyapunov(&a.transpose(), &(c.transpose() * c));
    let mut ev: Vec<f64> = (&wc * &wo)
        .complex_eigenvalues()
        .iter()
        .map(|z| z.re.max(0.0).sqrt())
        .collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    ev
}

/// Mean squared residual per target when each example is predicted by a model refit without it.
/// Each refit solves `(G + λI) c = y` from scratch with an LU factorization.
pub fn brute_force_loo(ds: &RegressionDataset, kernel: &KernelSpec, lambda: f64) -> DVector<f64> {
    let z = ds.kernel_inputs();
    let n = z.ncols();
    let t = ds.targets.nrows();
    let k = |i: usize, j: usize| {
        let a: Vec<f64> = z.column(i).iter().copied().collect();
        let b: Vec<f64> = z.column(j).iter().copied().collect();
        kernel.value(&a, &b)
    };
    let mut err = DVector::zeros(t);
    for j in 0..n {
        let keep: Vec<usize> = (0..n).filter(|&i| i != j).collect();
        let g = DMatrix::from_fn(n - 1, n - 1, |a, b| k(keep[a], keep[b]) + if a == b { lambda } else { 0.0 });
        let lu = g.lu();
        let kj = DVector::from_fn(n - 1, |a, _| k(keep[a], j));
        for r in 0..t {
            let y = DVector::from_fn(n - 1, |a, _| ds.targets[(r, keep[a])]);
            let c = lu.solve(&y).unwrap();
            err[r] += (ds.targets[(r, j)] - c.dot(&kj)).powi(2);
        }
    }
    err / n as f64
}

/// Central-difference Jacobian of `f` at `x` with step `h`.
pub fn central_difference(f: impl Fn(&[f64]) -> DVector<f64>, x: &[f64], h: f64) -> DMatrix<f64> {
    let rows = f(x).len();
    let mut jac = DMatrix::zeros(rows, x.len());
    let mut probe = x.to_vec();
    for k in 0..x.len() {
        probe[k] = x[k] + h;
        let plus = f(&probe);
        probe[k] = x[k] - h;
        let minus = f(&probe);
        probe[k] = x[k];
        jac.set_column(k, &((plus - minus) / (2.0 * h)));
    }
    jac
}

/// Matrix exponential response `e^{A t} b`.
pub fn expm_apply(a: &DMatrix<f64>, t: f64, b: &DVector<f64>) -> DVector<f64> {
    (a * t).exp() * b
}

pub fn uniform(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Random symmetric positive definite matrix with eigenvalues in `[lo, hi]`.
pub fn random_spd(n: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let q = uniform(n, n, rng).qr().q();
    let d = DVector::from_fn(n, |_, _| rng.random_range(lo..hi));
    let m = &q * DMatrix::from_diagonal(&d) * q.transpose();
    (&m + m.transpose()) * 0.5
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Frobenius norm of the off-diagonal part.
pub fn off_diagonal_norm(m: &DMatrix<f64>) -> f64 {
    let mut s = 0.0;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if i != j {
                s += m[(i, j)] * m[(i, j)];
            }
        }
    }
    s.sqrt()
}
