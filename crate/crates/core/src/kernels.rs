//! Kernel functions, Gram matrices, empirical feature maps and kernel gradients.
//!
//! Sample sets are stored as matrices with one sample per column.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelRecord", into = "KernelRecord")]
pub enum KernelSpec {
    /// `⟨x, y⟩`
    Linear,
    /// `(offset + ⟨x, y⟩)^degree`
    Polynomial { degree: u32, offset: f64 },
    /// `exp(-gamma ‖x - y‖²)`
    Gaussian { gamma: f64 },
}

/// Flat JSON form `{"family": ..., "degree"/"offset"/"gamma": ...}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KernelRecord {
    family: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    degree: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    offset: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gamma: Option<f64>,
}

impl TryFrom<KernelRecord> for KernelSpec {
    type Error = String;

    fn try_from(r: KernelRecord) -> std::result::Result<Self, String> {
        let family = r.family.as_str();
        let stray = |field: &str, present: bool| {
            if present {
                Err(format!("kernel family {family:?} takes no {field:?}"))
            } else {
                Ok(())
            }
        };
        match family {
            "linear" => {
                stray("degree", r.degree.is_some())?;
                stray("offset", r.offset.is_some())?;
                stray("gamma", r.gamma.is_some())?;
                Ok(KernelSpec::Linear)
            }
            "polynomial" => {
                stray("gamma", r.gamma.is_some())?;
                let degree = r.degree.ok_or("polynomial kernel needs a \"degree\"")?;
                Ok(KernelSpec::Polynomial {
                    degree,
                    offset: r.offset.unwrap_or(1.0),
                })
            }
            "gaussian" => {
                stray("degree", r.degree.is_some())?;
                stray("offset", r.offset.is_some())?;
                let gamma = r.gamma.ok_or("gaussian kernel needs a \"gamma\"")?;
                Ok(KernelSpec::Gaussian { gamma })
            }
            other => Err(format!(
                "unknown kernel family {other:?} (expected linear, polynomial or gaussian)"
            )),
        }
    }
}

impl From<KernelSpec> for KernelRecord {
    fn from(k: KernelSpec) -> Self {
        let mut r = KernelRecord {
            family: String::new(),
            degree: None,
            offset: None,
            gamma: None,
        };
        match k {
            KernelSpec::Linear => r.family = "linear".into(),
            KernelSpec::Polynomial { degree, offset } => {
                r.family = "polynomial".into();
                r.degree = Some(degree);
                r.offset = Some(offset);
            }
            KernelSpec::Gaussian { gamma } => {
                r.family = "gaussian".into();
                r.gamma = Some(gamma);
            }
        }
        r
    }
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Column `j` of a column-major matrix as a slice.
pub(crate) fn col(m: &DMatrix<f64>, j: usize) -> &[f64] {
    let n = m.nrows();
    &m.as_slice()[j * n..(j + 1) * n]
}

impl KernelSpec {
    pub fn polynomial(degree: u32) -> Self {
        KernelSpec::Polynomial {
            degree,
            offset: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Linear => Ok(()),
            KernelSpec::Polynomial { degree, offset } => {
                if degree == 0 {
                    return Err(Error::OutOfRange {
                        what: "polynomial degree",
                        value: 0.0,
                        range: ">= 1".into(),
                    });
                }
                if !(offset >= 0.0 && offset.is_finite()) {
                    return Err(Error::OutOfRange {
                        what: "polynomial offset",
                        value: offset,
                        range: "finite and >= 0".into(),
                    });
                }
                Ok(())
            }
            KernelSpec::Gaussian { gamma } => {
                if gamma > 0.0 && gamma.is_finite() {
                    Ok(())
                } else {
                    Err(Error::OutOfRange {
                        what: "gaussian gamma",
                        value: gamma,
                        range: "finite and > 0".into(),
                    })
                }
            }
        }
    }

    /// Kernel value without a length check.
    #[inline]
    pub fn value(&self, x: &[f64], y: &[f64]) -> f64 {
        match *self {
            KernelSpec::Linear => dot(x, y),
            KernelSpec::Polynomial { degree, offset } => (offset + dot(x, y)).powi(degree as i32),
            KernelSpec::Gaussian { gamma } => (-gamma * sq_dist(x, y)).exp(),
        }
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        if x.len() != y.len() {
            return Err(Error::dims("kernel arguments", x.len(), y.len()));
        }
        Ok(self.value(x, y))
    }

    /// Writes `∂K(x, y)/∂x` into `out`.
    #[inline]
    pub fn gradient_into(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        match *self {
            KernelSpec::Linear => out.copy_from_slice(y),
            KernelSpec::Polynomial { degree, offset } => {
                let scale = degree as f64 * (offset + dot(x, y)).powi(degree as i32 - 1);
                for (o, yi) in out.iter_mut().zip(y) {
                    *o = scale * yi;
                }
            }
            KernelSpec::Gaussian { gamma } => {
                let scale = -2.0 * gamma * (-gamma * sq_dist(x, y)).exp();
                for ((o, xi), yi) in out.iter_mut().zip(x).zip(y) {
                    *o = scale * (xi - yi);
                }
            }
        }
    }

    /// Gradient of `K(·, y)` at `x`.
    pub fn gradient(&self, x: &[f64], y: &[f64]) -> Result<DVector<f64>> {
        if x.len() != y.len() {
            return Err(Error::dims("kernel gradient arguments", x.len(), y.len()));
        }
        let mut out = DVector::zeros(x.len());
        self.gradient_into(x, y, out.as_mut_slice());
        Ok(out)
    }
}

/// Symmetric matrix of kernel values between all pairs of columns of `data`.
pub fn gram_matrix(kernel: &KernelSpec, data: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if data.ncols() == 0 {
        return Err(Error::InvalidArgument("gram matrix of an empty sample set".into()));
    }
    let l = data.ncols();
    let upper: Vec<Vec<f64>> = (0..l)
        .into_par_iter()
        .map(|j| {
            let yj = col(data, j);
            (0..=j).map(|i| kernel.value(col(data, i), yj)).collect()
        })
        .collect();
    let mut g = DMatrix::zeros(l, l);
    for (j, column) in upper.iter().enumerate() {
        for (i, &v) in column.iter().enumerate() {
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    Ok(g)
}

/// `K(a_i, b_j)` for columns `a_i` of `a` and `b_j` of `b`.
pub fn cross_gram(kernel: &KernelSpec, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.nrows() != b.nrows() {
        return Err(Error::dims("cross gram sample dimension", a.nrows(), b.nrows()));
    }
    let rows = a.ncols();
    let columns: Vec<f64> = (0..b.ncols())
        .into_par_iter()
        .flat_map_iter(|j| {
            let bj = col(b, j);
            (0..rows).map(move |i| kernel.value(col(a, i), bj))
        })
        .collect();
    Ok(DMatrix::from_vec(rows, b.ncols(), columns))
}

/// `1 / (mean pairwise Euclidean distance)` over the columns of `data`.
pub fn gamma_heuristic(data: &DMatrix<f64>) -> Result<f64> {
    let l = data.ncols();
    if l < 2 {
        return Err(Error::InvalidArgument(
            "gamma heuristic needs at least two training points".into(),
        ));
    }
    let total: f64 = (1..l)
        .map(|j| {
            let yj = col(data, j);
            (0..j).map(|i| sq_dist(col(data, i), yj).sqrt()).sum::<f64>()
        })
        .sum();
    let mean = total / (l * (l - 1) / 2) as f64;
    if !(mean > 0.0 && mean.is_finite()) {
        return Err(Error::Degenerate(
            "all training points coincide, so the gaussian width heuristic is undefined".into(),
        ));
    }
    Ok(1.0 / mean)
}

/// `k(x) = (K(x, s_1), …, K(x, s_L))` over a fixed, ordered sample set.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalFeatureMap {
    pub kernel: KernelSpec,
    /// One sample per column.
    pub samples: DMatrix<f64>,
}

impl EmpiricalFeatureMap {
    pub fn new(kernel: KernelSpec, samples: DMatrix<f64>) -> Result<Self> {
        kernel.validate()?;
        Ok(Self { kernel, samples })
    }

    pub fn input_dim(&self) -> usize {
        self.samples.nrows()
    }

    pub fn len(&self) -> usize {
        self.samples.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.ncols() == 0
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::dims("feature map argument", self.input_dim(), x.len()));
        }
        Ok(())
    }

    pub fn feature_vector(&self, x: &[f64]) -> Result<DVector<f64>> {
        self.check(x)?;
        Ok(DVector::from_iterator(
            self.len(),
            (0..self.len()).map(|l| self.kernel.value(x, col(&self.samples, l))),
        ))
    }

    /// `L × n` matrix whose row `l` is the gradient of `K(·, s_l)` at `x`.
    pub fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.check(x)?;
        let n = self.input_dim();
        let l = self.len();
        // assemble transposed so each gradient is a contiguous column
        let mut jt = DMatrix::zeros(n, l);
        let buf = jt.as_mut_slice();
        for j in 0..l {
            self.kernel
                .gradient_into(x, col(&self.samples, j), &mut buf[j * n..(j + 1) * n]);
        }
        Ok(jt.transpose())
    }
}
