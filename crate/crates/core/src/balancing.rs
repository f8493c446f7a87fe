//! Simultaneous diagonalization of controllability and observability data in feature space,
//! truncation, and the nonlinear reduction map `Π(x) = T_qᵀ k_c(x)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gramians::GramianDataset;
use crate::kernels::{cross_gram, gram_matrix, EmpiricalFeatureMap, KernelSpec};
use crate::numerics::{check_symmetric, symmetrize, SymmetricSpectrum, ToleranceConfig};

/// Result of balancing a pair of PSD matrices `(P, Q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairBalancing {
    /// Descending, length `r` (numerical rank of `S Q S`).
    pub hankel: DVector<f64>,
    /// `T = Σ^{1/2} Uᵀ S†`, `r × L`.
    pub transform: DMatrix<f64>,
    /// `T^{-ᵀ} = Σ^{-1/2} Uᵀ S`, `r × L`.
    pub inverse_transpose: DMatrix<f64>,
}

impl PairBalancing {
    pub fn rank(&self) -> usize {
        self.hankel.len()
    }
}

/// Balances `(P, Q)` so that `T P Tᵀ = T^{-ᵀ} Q T^{-1} = Σ`.
///
/// `S = sqrt(P)`, `S Q S = U Σ² Uᵀ` truncated where `Σ²` falls below `pinv_rtol` of its maximum.
pub fn balance_pair(p: &DMatrix<f64>, q: &DMatrix<f64>, tol: &ToleranceConfig) -> Result<PairBalancing> {
    if p.shape() != q.shape() {
        return Err(Error::dims("balanced pair sizes", p.nrows(), q.nrows()));
    }
    check_symmetric(q)?;
    let spec = SymmetricSpectrum::new(p)?;
    balance_with_root(&spec.sqrt(tol), &spec.pinv_sqrt(tol), q, tol)
}

/// [`balance_pair`] given `S = sqrt(P)` and its pseudoinverse.
fn balance_with_root(
    s: &DMatrix<f64>,
    s_pinv: &DMatrix<f64>,
    q: &DMatrix<f64>,
    tol: &ToleranceConfig,
) -> Result<PairBalancing> {
    let inner = symmetrize(&(s * q * s));
    // `S Q S` is PSD, so its eigendecomposition is its SVD
    let eig = SymmetricSpectrum::new(&inner)?;
    let r = eig.rank(tol.pinv_rtol);
    if r == 0 {
        return Err(Error::Degenerate(
            "no nonzero Hankel values: the system looks uncontrollable or unobservable from the data".into(),
        ));
    }
    let hankel = DVector::from_iterator(r, eig.values.iter().take(r).map(|v| v.sqrt()));
    let ut = eig.vectors.columns(0, r).transpose();
    let mut transform = &ut * s_pinv;
    let mut inverse_transpose = &ut * s;
    for k in 0..r {
        let root = hankel[k].sqrt();
        transform.row_mut(k).scale_mut(root);
        inverse_transpose.row_mut(k).scale_mut(1.0 / root);
    }
    Ok(PairBalancing {
        hankel,
        transform,
        inverse_transpose,
    })
}

/// Balancing of a Gramian dataset in the feature space of `kernel`.
#[derive(Debug, Clone)]
pub struct KernelBalancing {
    pub fmap: EmpiricalFeatureMap,
    /// Descending Hankel values.
    pub hankel: DVector<f64>,
    /// Rows act on `k_c(x)`; `r × L`.
    pub transform: DMatrix<f64>,
    /// `t_final / (m N)`.
    pub gram_scale: f64,
}

/// Kernel balanced realization of the dataset.
///
/// Both Gramians are expressed in the basis `Φ_c K̂^{-1/2}` of the span of the controllability
/// features, with `K̂ = K_c + jitter·I`. There the controllability Gramian is `s_c K̂` and the
/// observability Gramian is `s_o K̂^{-1/2} K_co K_coᵀ K̂^{-1/2}`, where `K_co` holds kernel values
/// between controllability and observability samples and `s_c`, `s_o` are the Gramian scale
/// factors. The balancing transform of that pair, composed with `K̂^{-1/2}`, acts directly on
/// `k_c(x)`. For a linear kernel this reproduces Moore's Hankel values and balanced
/// coordinates exactly (with zero jitter).
pub fn kernel_balance(ds: &GramianDataset, kernel: &KernelSpec, tol: &ToleranceConfig) -> Result<KernelBalancing> {
    kernel.validate()?;
    tol.validate()?;
    if ds.obs_samples.nrows() != ds.ctrl_samples.nrows() {
        return Err(Error::dims("observability sample dimension", ds.ctrl_samples.nrows(), ds.obs_samples.nrows()));
    }
    let l = ds.ctrl_samples.ncols();
    let mut k_hat = gram_matrix(kernel, &ds.ctrl_samples)?;
    for i in 0..l {
        k_hat[(i, i)] += tol.jitter;
    }
    let k_co = cross_gram(kernel, &ds.ctrl_samples, &ds.obs_samples)?;
    let (s_c, s_o) = (ds.ctrl_scale(), ds.obs_scale());

    let spec = SymmetricSpectrum::new(&k_hat)?;
    let root = spec.sqrt(tol);
    let root_pinv = spec.pinv_sqrt(tol);
    let s = &root * s_c.sqrt();
    let s_pinv = &root_pinv / s_c.sqrt();
    let half = &root_pinv * &k_co;
    let q = symmetrize(&(&half * half.transpose() * s_o));

    let pair = balance_with_root(&s, &s_pinv, &q, tol)?;
    let transform = &pair.transform * &root_pinv;
    Ok(KernelBalancing {
        fmap: EmpiricalFeatureMap::new(*kernel, ds.ctrl_samples.clone())?,
        hankel: pair.hankel,
        transform,
        gram_scale: s_c,
    })
}

/// `σ_k / σ_{k+1}` for consecutive Hankel values.
pub fn gap_ratios(hankel: &DVector<f64>) -> Vec<f64> {
    hankel.as_slice().windows(2).map(|w| w[0] / w[1]).collect()
}

/// Smallest order `k` with `σ_k / σ_{k+1} ≥ threshold`, else the order with the largest ratio.
pub fn auto_gap_order(hankel: &DVector<f64>, threshold: f64) -> usize {
    let ratios = gap_ratios(hankel);
    if let Some(k) = ratios.iter().position(|&r| r >= threshold) {
        return k + 1;
    }
    ratios
        .iter()
        .enumerate()
        .fold(None, |best: Option<(usize, f64)>, (k, &r)| match best {
            Some((_, b)) if b >= r => best,
            _ => Some((k, r)),
        })
        .map(|(k, _)| k + 1)
        .unwrap_or(hankel.len().max(1))
}

/// Truncated kernel balancing: the reduction map and everything needed to differentiate it.
#[derive(Debug, Clone, PartialEq)]
pub struct BalancedReduction {
    pub fmap: EmpiricalFeatureMap,
    /// All Hankel values, descending.
    pub hankel: DVector<f64>,
    /// First `q` rows of the balancing transform (`T_qᵀ`), `q × L`.
    pub retained: DMatrix<f64>,
    pub gram_scale: f64,
}

/// `(T_qᵀ K_c T_q)^{-1}` together with how far `T_qᵀ K_c T_q` is from `T_qᵀ T_q Σ_q`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricMatrix {
    pub inverse: DMatrix<f64>,
    /// `‖T_qᵀK_cT_q − T_qᵀT_qΣ_q‖ / ‖T_qᵀK_cT_q‖`; zero only when the columns of `T_q` are
    /// eigenvectors of `K_c`.
    pub identity_residual: f64,
}

/// Keeps the leading `order` directions.
pub fn truncate(kb: &KernelBalancing, order: usize) -> Result<BalancedReduction> {
    let r = kb.hankel.len();
    if order == 0 || order > r {
        return Err(Error::OutOfRange {
            what: "reduced order q",
            value: order as f64,
            range: format!("1..={r} (numerical rank)"),
        });
    }
    Ok(BalancedReduction {
        fmap: kb.fmap.clone(),
        hankel: kb.hankel.clone(),
        retained: kb.transform.rows(0, order).clone_owned(),
        gram_scale: kb.gram_scale,
    })
}

impl BalancedReduction {
    pub fn order(&self) -> usize {
        self.retained.nrows()
    }

    pub fn state_dim(&self) -> usize {
        self.fmap.input_dim()
    }

    /// `Π(x) = T_qᵀ k_c(x)`
    pub fn reduce(&self, x: &[f64]) -> Result<DVector<f64>> {
        Ok(&self.retained * self.fmap.feature_vector(x)?)
    }

    /// `∂Π/∂x`, `q × n`.
    pub fn jacobian_of_pi(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        Ok(&self.retained * self.fmap.jacobian(x)?)
    }

    /// Reduced coordinates of every stored sample, `q × L`.
    pub fn reduced_samples(&self) -> Result<DMatrix<f64>> {
        let k = gram_matrix(&self.fmap.kernel, &self.fmap.samples)?;
        Ok(&self.retained * k)
    }

    pub fn metric_matrix(&self) -> Result<MetricMatrix> {
        let k = gram_matrix(&self.fmap.kernel, &self.fmap.samples)?;
        let gram = symmetrize(&(&self.retained * k * self.retained.transpose()));
        let sigma = DMatrix::from_diagonal(&self.hankel.rows(0, self.order()).clone_owned());
        let alt = &self.retained * self.retained.transpose() * sigma;
        let identity_residual = (&gram - alt).norm() / gram.norm().max(f64::MIN_POSITIVE);
        let inverse = gram
            .clone()
            .cholesky()
            .map(|c| c.inverse())
            .ok_or_else(|| {
                Error::RankDeficient("retained block T_qᵀ K_c T_q is not positive definite".into())
            })?;
        Ok(MetricMatrix {
            inverse: symmetrize(&inverse),
            identity_residual,
        })
    }
}
