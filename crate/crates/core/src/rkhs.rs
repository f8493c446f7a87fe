//! Kernel regularized least squares with closed-form leave-one-out cross-validation.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernels::{col, gram_matrix, KernelSpec};
use crate::numerics::{jittered_cholesky, SymmetricSpectrum, ToleranceConfig};

/// Training pairs, one example per column.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionDataset {
    /// `d × ℓ` (before bias augmentation).
    pub inputs: DMatrix<f64>,
    /// `t × ℓ`
    pub targets: DMatrix<f64>,
    /// Append a constant 1 coordinate to every input.
    pub bias: bool,
}

/// Appends a row of ones when `bias` is set.
fn augment(inputs: &DMatrix<f64>, bias: bool) -> DMatrix<f64> {
    if bias {
        let rows = inputs.nrows();
        inputs.clone().insert_row(rows, 1.0)
    } else {
        inputs.clone()
    }
}

impl RegressionDataset {
    pub fn new(inputs: DMatrix<f64>, targets: DMatrix<f64>, bias: bool) -> Result<Self> {
        if inputs.ncols() != targets.ncols() {
            return Err(Error::dims("regression example count", inputs.ncols(), targets.ncols()));
        }
        if inputs.ncols() == 0 {
            return Err(Error::InvalidArgument("regression dataset is empty".into()));
        }
        Ok(Self { inputs, targets, bias })
    }

    pub fn len(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.ncols() == 0
    }

    /// Inputs as seen by the kernel.
    pub fn kernel_inputs(&self) -> DMatrix<f64> {
        augment(&self.inputs, self.bias)
    }

    /// Same inputs, targets restricted to the listed rows.
    pub fn select_targets(&self, rows: &[usize]) -> Self {
        Self {
            inputs: self.inputs.clone(),
            targets: self.targets.select_rows(rows),
            bias: self.bias,
        }
    }
}

/// `f̂(z) = C k(z)` with `k(z)_j = K(z, z_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RkhsModel {
    pub kernel: KernelSpec,
    /// Training inputs after bias augmentation, `d' × ℓ`.
    pub centers: DMatrix<f64>,
    /// One row per target coordinate, `t × ℓ`.
    pub coefficients: DMatrix<f64>,
    pub lambda: f64,
    pub bias: bool,
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::OutOfRange {
            what: "regularization lambda",
            value: lambda,
            range: "finite and > 0".into(),
        })
    }
}

/// Cholesky factor of `G + λI` (no extra jitter).
fn regularized_factor(gram: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    let tol = ToleranceConfig::default().with_jitter(lambda);
    jittered_cholesky(gram, &tol)
}

fn cholesky_solve(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let y = l.solve_lower_triangular(b).expect("factor has a positive diagonal");
    l.transpose()
        .solve_upper_triangular(&y)
        .expect("factor has a positive diagonal")
}

/// Solves `(G + λI) c = y` for every target coordinate with one shared factorization.
pub fn rls_fit(ds: &RegressionDataset, kernel: &KernelSpec, lambda: f64) -> Result<RkhsModel> {
    check_lambda(lambda)?;
    kernel.validate()?;
    let centers = ds.kernel_inputs();
    let gram = gram_matrix(kernel, &centers)?;
    let l = regularized_factor(&gram, lambda)?;
    let c = cholesky_solve(&l, &ds.targets.transpose());
    Ok(RkhsModel {
        kernel: *kernel,
        centers,
        coefficients: c.transpose(),
        lambda,
        bias: ds.bias,
    })
}

impl RkhsModel {
    /// Input dimension before bias augmentation.
    pub fn input_dim(&self) -> usize {
        self.centers.nrows() - usize::from(self.bias)
    }

    pub fn output_dim(&self) -> usize {
        self.coefficients.nrows()
    }

    /// Kernel values against every training input.
    pub fn features(&self, z: &[f64]) -> Result<DVector<f64>> {
        if z.len() != self.input_dim() {
            return Err(Error::dims("model input", self.input_dim(), z.len()));
        }
        let mut buf = Vec::with_capacity(self.centers.nrows());
        buf.extend_from_slice(z);
        if self.bias {
            buf.push(1.0);
        }
        Ok(DVector::from_iterator(
            self.centers.ncols(),
            (0..self.centers.ncols()).map(|j| self.kernel.value(&buf, col(&self.centers, j))),
        ))
    }

    pub fn predict(&self, z: &[f64]) -> Result<DVector<f64>> {
        Ok(&self.coefficients * self.features(z)?)
    }

    /// Predictions for every column of `inputs`.
    pub fn predict_all(&self, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(self.output_dim(), inputs.ncols());
        for j in 0..inputs.ncols() {
            out.set_column(j, &self.predict(col(inputs, j))?);
        }
        Ok(out)
    }
}

/// Mean squared leave-one-out residual per target coordinate, from
/// `r_j = c_j / H_jj` with `H = (G + λI)^{-1}` and `c = H y`.
pub fn loocv_error(ds: &RegressionDataset, kernel: &KernelSpec, lambda: f64) -> Result<DVector<f64>> {
    check_lambda(lambda)?;
    kernel.validate()?;
    let gram = gram_matrix(kernel, &ds.kernel_inputs())?;
    let l = regularized_factor(&gram, lambda)?;
    let n = ds.len();
    let h = cholesky_solve(&l, &DMatrix::identity(n, n));
    let c = &h * ds.targets.transpose();
    let t = ds.targets.nrows();
    Ok(DVector::from_iterator(
        t,
        (0..t).map(|k| (0..n).map(|j| (c[(j, k)] / h[(j, j)]).powi(2)).sum::<f64>() / n as f64),
    ))
}

/// LOOCV error over a grid of regularization values.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaSelection {
    pub best: f64,
    /// `(λ, summed LOOCV error)` in ascending `λ`.
    pub curve: Vec<(f64, f64)>,
}

/// Picks the `λ` minimizing the LOOCV error summed over target coordinates. Ties go to the
/// larger `λ`.
///
/// All grid values share one eigendecomposition `G = Q W Qᵀ` (eigenvalues clipped at zero):
/// `c = Q (W + λI)^{-1} Qᵀ y` and `H_jj = Σ_k Q_jk² / (w_k + λ)`.
pub fn select_lambda(ds: &RegressionDataset, kernel: &KernelSpec, grid: &[f64]) -> Result<LambdaSelection> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("lambda grid is empty".into()));
    }
    for &lambda in grid {
        check_lambda(lambda)?;
    }
    kernel.validate()?;
    let mut lambdas = grid.to_vec();
    lambdas.sort_by(f64::total_cmp);
    lambdas.dedup();

    let gram = gram_matrix(kernel, &ds.kernel_inputs())?;
    let spec = SymmetricSpectrum::new(&gram)?;
    let w = spec.values.map(|v| v.max(0.0));
    let q = &spec.vectors;
    let q_sq = q.component_mul(q);
    let qty = q.transpose() * ds.targets.transpose();
    let n = ds.len();

    let mut curve = Vec::with_capacity(lambdas.len());
    let mut best: Option<(f64, f64)> = None;
    for &lambda in &lambdas {
        let d = w.map(|v| 1.0 / (v + lambda));
        let mut scaled = qty.clone();
        for (k, mut row) in scaled.row_iter_mut().enumerate() {
            row *= d[k];
        }
        let c = q * scaled;
        let h_diag = &q_sq * &d;
        let mut err = 0.0;
        for k in 0..c.ncols() {
            err += (0..n).map(|j| (c[(j, k)] / h_diag[j]).powi(2)).sum::<f64>() / n as f64;
        }
        curve.push((lambda, err));
        if best.is_none_or(|(_, e)| err <= e) {
            best = Some((lambda, err));
        }
    }
    Ok(LambdaSelection {
        best: best.expect("grid is non-empty").0,
        curve,
    })
}

/// `count` values spaced evenly in `log10` between `10^lo` and `10^hi`.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![10f64.powf(lo)],
        _ => (0..count)
            .map(|k| 10f64.powf(lo + (hi - lo) * k as f64 / (count - 1) as f64))
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn single_example_scalar_solve() {
        let ds = RegressionDataset::new(dmatrix![0.5; 1.0], dmatrix![2.0], false).unwrap();
        let k = KernelSpec::polynomial(2);
        let m = rls_fit(&ds, &k, 0.1).unwrap();
        let kzz = k.value(&[0.5, 1.0], &[0.5, 1.0]);
        assert!((m.coefficients[(0, 0)] - 2.0 / (kzz + 0.1)).abs() < 1e-14);
    }

    #[test]
    fn zero_targets_give_zero_model() {
        let ds = RegressionDataset::new(random(2, 6, 1), DMatrix::zeros(3, 6), true).unwrap();
        let m = rls_fit(&ds, &KernelSpec::Gaussian { gamma: 1.0 }, 1e-3).unwrap();
        assert_eq!(m.coefficients.amax(), 0.0);
        assert_eq!(m.predict(&[0.1, 0.2]).unwrap().amax(), 0.0);
    }

    #[test]
    fn interpolates_training_points_with_tiny_lambda() {
        let x = random(2, 8, 2);
        let y = DMatrix::from_fn(1, 8, |_, j| x[(0, j)].sin());
        let ds = RegressionDataset::new(x.clone(), y.clone(), false).unwrap();
        let m = rls_fit(&ds, &KernelSpec::Gaussian { gamma: 2.0 }, 1e-12).unwrap();
        for j in 0..8 {
            let p = m.predict(col(&x, j)).unwrap();
            assert!((p[0] - y[(0, j)]).abs() < 1e-6);
        }
    }

    #[test]
    fn predictions_are_linear_in_coefficients() {
        let ds = RegressionDataset::new(random(3, 10, 3), random(2, 10, 4), true).unwrap();
        let mut m = rls_fit(&ds, &KernelSpec::polynomial(3), 1e-2).unwrap();
        let z = [0.2, -0.1, 0.4];
        let p = m.predict(&z).unwrap();
        let k = m.features(&z).unwrap();
        assert!((&m.coefficients * &k - &p).amax() < 1e-14);
        m.coefficients *= 2.0;
        assert!((m.predict(&z).unwrap() - p * 2.0).amax() < 1e-12);
    }

    #[test]
    fn bias_augments_inputs() {
        let ds = RegressionDataset::new(random(2, 4, 5), random(1, 4, 6), true).unwrap();
        let m = rls_fit(&ds, &KernelSpec::Linear, 1.0).unwrap();
        assert_eq!(m.centers.nrows(), 3);
        assert_eq!(m.input_dim(), 2);
        assert!(m.centers.row(2).iter().all(|&v| v == 1.0));
        assert!(m.predict(&[1.0, 2.0, 1.0]).is_err());
    }

    #[test]
    fn loocv_limits() {
        let ds = RegressionDataset::new(random(2, 12, 7), random(2, 12, 8), false).unwrap();
        let err = loocv_error(&ds, &KernelSpec::polynomial(2), 1e12).unwrap();
        for k in 0..2 {
            let mean_sq = ds.targets.row(k).map(|v| v * v).mean();
            assert!((err[k] - mean_sq).abs() < 1e-6 * mean_sq);
        }
    }

    #[test]
    fn eigen_route_matches_direct_loocv() {
        let ds = RegressionDataset::new(random(3, 15, 9), random(2, 15, 10), true).unwrap();
        let k = KernelSpec::Gaussian { gamma: 0.8 };
        let grid = log_grid(-4.0, 1.0, 6);
        let sel = select_lambda(&ds, &k, &grid).unwrap();
        for &(lambda, err) in &sel.curve {
            let direct = loocv_error(&ds, &k, lambda).unwrap().sum();
            assert!((err - direct).abs() <= 1e-8 * direct.max(1.0), "{lambda}: {err} vs {direct}");
        }
    }

    #[test]
    fn selection_edge_cases() {
        let ds = RegressionDataset::new(random(2, 10, 11), random(1, 10, 12), false).unwrap();
        let k = KernelSpec::polynomial(2);
        assert_eq!(select_lambda(&ds, &k, &[0.3]).unwrap().best, 0.3);
        let grid = log_grid(-6.0, 2.0, 9);
        let mut reversed = grid.clone();
        reversed.reverse();
        assert_eq!(
            select_lambda(&ds, &k, &grid).unwrap().best,
            select_lambda(&ds, &k, &reversed).unwrap().best
        );
        assert!(select_lambda(&ds, &k, &[]).is_err());
        assert!(select_lambda(&ds, &k, &[0.0]).is_err());
    }

    #[test]
    fn ties_go_to_larger_lambda() {
        // targets identically zero: every λ has zero error
        let ds = RegressionDataset::new(random(2, 6, 13), DMatrix::zeros(1, 6), false).unwrap();
        let sel = select_lambda(&ds, &KernelSpec::Linear, &[1e-3, 1.0, 1e-1]).unwrap();
        assert_eq!(sel.best, 1.0);
    }

    #[test]
    fn log_grid_endpoints() {
        let g = log_grid(-10.0, 2.0, 25);
        assert_eq!(g.len(), 25);
        assert!((g[0] - 1e-10).abs() < 1e-24);
        assert!((g[24] - 100.0).abs() < 1e-12);
        assert!((g[2] - 1e-9).abs() < 1e-22);
    }
}
