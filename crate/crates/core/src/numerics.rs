//! Dense linear-algebra primitives shared by the balancing and learning code.
//!
//! Every cutoff used anywhere in the crate comes from a [`ToleranceConfig`].

use faer::Mat;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Numerical tolerances for square roots, pseudoinverses and factorizations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToleranceConfig {
    /// Singular values below `pinv_rtol * sigma_max` are treated as zero.
    pub pinv_rtol: f64,
    /// Floor for eigenvalues inside PSD square roots.
    pub psd_clip: f64,
    /// Diagonal regularizer added before Cholesky and to the controllability Gram matrix.
    pub jitter: f64,
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        Self {
            pinv_rtol: 1e-10,
            psd_clip: 0.0,
            jitter: 1e-3,
        }
    }
}

impl ToleranceConfig {
    pub fn with_jitter(mut self, jitter: f64) -> Self {
        self.jitter = jitter;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (what, value) in [
            ("pinv_rtol", self.pinv_rtol),
            ("psd_clip", self.psd_clip),
            ("jitter", self.jitter),
        ] {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(Error::OutOfRange {
                    what,
                    value,
                    range: "finite and >= 0".into(),
                });
            }
        }
        Ok(())
    }
}

/// Largest absolute entry.
pub fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Largest |A_ij - A_ji|.
pub fn asymmetry(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0_f64;
    for j in 0..n {
        for i in (j + 1)..n {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

pub fn check_symmetric(a: &DMatrix<f64>) -> Result<()> {
    if !a.is_square() {
        return Err(Error::dims("symmetric matrix (columns)", a.nrows(), a.ncols()));
    }
    let asym = asymmetry(a);
    let limit = 1e-8 * max_abs(a);
    if asym > limit {
        return Err(Error::NotSymmetric {
            asymmetry: asym,
            limit,
        });
    }
    Ok(())
}

/// Exactly symmetric copy `(A + Aᵀ) / 2`.
pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Symmetric eigendecomposition with eigenvalues sorted in descending order.
#[derive(Debug, Clone)]
pub struct SymmetricSpectrum {
    pub values: DVector<f64>,
    /// Orthonormal eigenvectors as columns, matching `values`.
    pub vectors: DMatrix<f64>,
}

impl SymmetricSpectrum {
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        check_symmetric(a)?;
        let n = a.nrows();
        if n == 0 {
            return Ok(Self { values: DVector::zeros(0), vectors: DMatrix::zeros(0, 0) });
        }
        let eig = to_faer(&symmetrize(a))
            .self_adjoint_eigen(faer::Side::Lower)
            .map_err(|e| Error::Degenerate(format!("symmetric eigendecomposition failed: {e:?}")))?;
        let (w, q) = (eig.S().column_vector(), eig.U());
        // faer returns ascending eigenvalues
        let values = DVector::from_fn(n, |k, _| w[n - 1 - k]);
        let vectors = DMatrix::from_fn(n, n, |i, k| q[(i, n - 1 - k)]);
        Ok(Self { values, vectors })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `Q diag(g(λ)) Qᵀ`.
    pub fn map(&self, g: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let mut scaled = self.vectors.clone();
        for (k, mut col) in scaled.column_iter_mut().enumerate() {
            col *= g(self.values[k]);
        }
        symmetrize(&(scaled * self.vectors.transpose()))
    }

    fn clipped(&self, tol: &ToleranceConfig) -> impl Fn(f64) -> f64 {
        let floor = tol.psd_clip;
        move |v| if v < floor { floor } else { v }
    }

    /// `Q Λ^{1/2} Qᵀ` with eigenvalues below `psd_clip` raised to it.
    pub fn sqrt(&self, tol: &ToleranceConfig) -> DMatrix<f64> {
        let clip = self.clipped(tol);
        self.map(|v| clip(v).sqrt())
    }

    /// Square root of the pseudoinverse: inverse square roots on the eigenvalues above
    /// `pinv_rtol * λ_max`, zero elsewhere.
    pub fn pinv_sqrt(&self, tol: &ToleranceConfig) -> DMatrix<f64> {
        let clip = self.clipped(tol);
        let cut = tol.pinv_rtol * self.max().max(0.0);
        self.map(|v| {
            let v = clip(v);
            if v > cut && v > 0.0 {
                1.0 / v.sqrt()
            } else {
                0.0
            }
        })
    }

    /// Spectral pseudoinverse with the same cutoff as [`pinv_sqrt`](Self::pinv_sqrt).
    pub fn pinv(&self, tol: &ToleranceConfig) -> DMatrix<f64> {
        let clip = self.clipped(tol);
        let cut = tol.pinv_rtol * self.max().max(0.0);
        self.map(|v| {
            let v = clip(v);
            if v > cut && v > 0.0 {
                1.0 / v
            } else {
                0.0
            }
        })
    }

    /// Number of eigenvalues above `rtol * λ_max`.
    pub fn rank(&self, rtol: f64) -> usize {
        let cut = rtol * self.max().max(0.0);
        self.values.iter().filter(|&&v| v > cut && v > 0.0).count()
    }
}

/// PSD square root through the symmetric eigendecomposition, clipping negative eigenvalues.
pub fn psd_sqrt(a: &DMatrix<f64>, tol: &ToleranceConfig) -> Result<DMatrix<f64>> {
    Ok(SymmetricSpectrum::new(a)?.sqrt(tol))
}

/// Reduced singular value decomposition `A = U diag(σ) Vᵀ`, σ descending.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub v: DMatrix<f64>,
}

pub fn reduced_svd(a: &DMatrix<f64>) -> Svd {
    let k = a.nrows().min(a.ncols());
    if k == 0 {
        return Svd {
            u: DMatrix::zeros(a.nrows(), 0),
            singular_values: DVector::zeros(0),
            v: DMatrix::zeros(a.ncols(), 0),
        };
    }
    let svd = to_faer(a).thin_svd().expect("SVD of a finite matrix converges");
    let (u, s, v) = (svd.U(), svd.S().column_vector(), svd.V());
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]));
    Svd {
        u: DMatrix::from_fn(a.nrows(), k, |i, c| u[(i, order[c])]),
        singular_values: DVector::from_fn(k, |c, _| s[order[c]]),
        v: DMatrix::from_fn(a.ncols(), k, |i, c| v[(i, order[c])]),
    }
}

fn to_faer(a: &DMatrix<f64>) -> Mat<f64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

/// Moore–Penrose pseudoinverse; singular values below `pinv_rtol * σ_max` are dropped.
pub fn pinv(a: &DMatrix<f64>, tol: &ToleranceConfig) -> DMatrix<f64> {
    if a.is_empty() {
        return DMatrix::zeros(a.ncols(), a.nrows());
    }
    let svd = reduced_svd(a);
    let cut = tol.pinv_rtol * svd.singular_values.get(0).copied().unwrap_or(0.0);
    let mut vs = svd.v.clone();
    for (k, mut col) in vs.column_iter_mut().enumerate() {
        let s = svd.singular_values[k];
        col *= if s > cut && s > 0.0 { 1.0 / s } else { 0.0 };
    }
    vs * svd.u.transpose()
}

/// Lower-triangular `L` with `L Lᵀ = A + jitter·I`.
pub fn jittered_cholesky(a: &DMatrix<f64>, tol: &ToleranceConfig) -> Result<DMatrix<f64>> {
    check_symmetric(a)?;
    let n = a.nrows();
    let shifted = symmetrize(a) + DMatrix::identity(n, n) * tol.jitter;
    match nalgebra::Cholesky::new(shifted.clone()) {
        Some(chol) => Ok(chol.unpack()),
        None => {
            let min_eigenvalue = SymmetricSpectrum::new(&shifted)?.min();
            Err(Error::NotPositiveDefinite { min_eigenvalue })
        }
    }
}
