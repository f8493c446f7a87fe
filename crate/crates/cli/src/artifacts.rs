//! On-disk forms of the pipeline's intermediate results.
//!
//! Matrices are stored as lists of rows; `serde_json` prints each `f64` in its shortest
//! round-tripping form, so every bundle reads back bit-for-bit.

use std::fs;
use std::io::Write;
use std::path::Path;

use kernel_mor_core::balancing::BalancedReduction;
use kernel_mor_core::gramians::format_float;
use kernel_mor_core::kernels::{EmpiricalFeatureMap, KernelSpec};
use kernel_mor_core::reduced::{DynamicsModel, Refresh};
use kernel_mor_core::rkhs::RkhsModel;
use kernel_mor_core::{TimeGrid, Trajectory};
use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn columns(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.column_iter().map(|c| c.iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>], ncols: usize) -> Option<DMatrix<f64>> {
    rows.iter()
        .all(|r| r.len() == ncols)
        .then(|| DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn from_columns(cols: &[Vec<f64>], nrows: usize) -> Option<DMatrix<f64>> {
    cols.iter()
        .all(|c| c.len() == nrows)
        .then(|| DMatrix::from_fn(nrows, cols.len(), |i, j| cols[j][i]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OrderSource {
    Fixed,
    AutoGap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReductionBundle {
    pub kernel: KernelSpec,
    pub order: usize,
    pub order_source: OrderSource,
    pub gram_scale: f64,
    pub hankel: Vec<f64>,
    /// Controllability samples, one per entry.
    pub samples: Vec<Vec<f64>>,
    /// Retained rows of the balancing transform acting on `k_c(x)`.
    pub retained: Vec<Vec<f64>>,
}

impl ReductionBundle {
    pub fn new(br: &BalancedReduction, order_source: OrderSource) -> Self {
        Self {
            kernel: br.fmap.kernel,
            order: br.order(),
            order_source,
            gram_scale: br.gram_scale,
            hankel: br.hankel.iter().copied().collect(),
            samples: columns(&br.fmap.samples),
            retained: rows(&br.retained),
        }
    }

    pub fn to_reduction(&self, path: &Path) -> Result<BalancedReduction, CliError> {
        let bad = |m: &str| CliError::artifact(path, m);
        let n = self.samples.first().map(Vec::len).ok_or_else(|| bad("no samples"))?;
        let samples = from_columns(&self.samples, n).ok_or_else(|| bad("ragged samples"))?;
        let retained = from_rows(&self.retained, samples.ncols()).ok_or_else(|| bad("retained rows do not match the sample count"))?;
        if retained.nrows() != self.order {
            return Err(bad("order does not match the retained rows"));
        }
        Ok(BalancedReduction {
            fmap: EmpiricalFeatureMap::new(self.kernel, samples).map_err(|e| bad(&e.to_string()))?,
            hankel: DVector::from_vec(self.hankel.clone()),
            retained,
            gram_scale: self.gram_scale,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBundle {
    pub kernel: KernelSpec,
    pub lambda: f64,
    pub bias: bool,
    /// `(λ, summed LOOCV error)` over the searched grid, ascending in `λ`.
    pub loocv: Vec<(f64, f64)>,
    /// Training inputs after bias augmentation, one per entry.
    pub centers: Vec<Vec<f64>>,
    /// One row per target coordinate.
    pub coefficients: Vec<Vec<f64>>,
}

impl ModelBundle {
    pub fn new(m: &RkhsModel, loocv: Vec<(f64, f64)>) -> Self {
        Self {
            kernel: m.kernel,
            lambda: m.lambda,
            bias: m.bias,
            loocv,
            centers: columns(&m.centers),
            coefficients: rows(&m.coefficients),
        }
    }

    pub fn to_model(&self, path: &Path) -> Result<RkhsModel, CliError> {
        let bad = |m: &str| CliError::artifact(path, m);
        let d = self.centers.first().map(Vec::len).ok_or_else(|| bad("model has no centers"))?;
        let centers = from_columns(&self.centers, d).ok_or_else(|| bad("ragged centers"))?;
        let coefficients =
            from_rows(&self.coefficients, centers.ncols()).ok_or_else(|| bad("coefficients do not match the centers"))?;
        Ok(RkhsModel {
            kernel: self.kernel,
            centers,
            coefficients,
            lambda: self.lambda,
            bias: self.bias,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DynamicsBundle {
    Joint { model: ModelBundle },
    PerCoordinate { models: Vec<ModelBundle> },
    Separable { drift: ModelBundle, input_gains: Vec<ModelBundle> },
}

impl DynamicsBundle {
    /// `(label, model)` pairs in a fixed order.
    pub fn labelled(&self) -> Vec<(String, &ModelBundle)> {
        match self {
            DynamicsBundle::Joint { model } => vec![("f".into(), model)],
            DynamicsBundle::PerCoordinate { models } => {
                models.iter().enumerate().map(|(i, m)| (format!("f{}", i + 1), m)).collect()
            }
            DynamicsBundle::Separable { drift, input_gains } => std::iter::once(("drift".into(), drift))
                .chain(input_gains.iter().enumerate().map(|(i, m)| (format!("g{}", i + 1), m)))
                .collect(),
        }
    }

    pub fn to_model(&self, path: &Path) -> Result<DynamicsModel, CliError> {
        Ok(match self {
            DynamicsBundle::Joint { model } => DynamicsModel::Joint(model.to_model(path)?),
            DynamicsBundle::PerCoordinate { models } => {
                DynamicsModel::PerCoordinate(models.iter().map(|m| m.to_model(path)).collect::<Result<_, _>>()?)
            }
            DynamicsBundle::Separable { drift, input_gains } => DynamicsModel::Separable {
                drift: drift.to_model(path)?,
                input_gains: input_gains.iter().map(|m| m.to_model(path)).collect::<Result<_, _>>()?,
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum JacobianRecord {
    Taylor { expansion: Vec<f64>, refresh: Refresh },
    KernelProperty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReducedSystemBundle {
    pub order: usize,
    pub jacobian: JacobianRecord,
    pub initial_state: Vec<f64>,
    /// `Π(x0)`
    pub reduced_initial_state: Vec<f64>,
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::artifact(path, e))?;
    s.push('\n');
    write_bytes(path, s.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::artifact(path, e))
}

/// CSV with a header row and every float printed to 17 significant digits.
pub fn write_table(path: &Path, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), CliError> {
    let file = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    let to_io = |e: csv::Error| CliError::artifact(path, e);
    w.write_record(header).map_err(to_io)?;
    for row in rows {
        w.write_record(&row).map_err(to_io)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn numbered(prefix: &str, count: usize) -> impl Iterator<Item = String> + '_ {
    (1..=count).map(move |k| format!("{prefix}{k}"))
}

/// `t, u1.., x1.., y1..` at each sample.
pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<(), CliError> {
    let (m, n, p) = (traj.inputs.nrows(), traj.states.nrows(), traj.outputs.nrows());
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain(numbered("u", m))
        .chain(numbered("x", n))
        .chain(numbered("y", p))
        .collect();
    let body = (0..traj.times.len()).map(|j| {
        std::iter::once(traj.times[j])
            .chain(traj.inputs.column(j).iter().copied())
            .chain(traj.states.column(j).iter().copied())
            .chain(traj.outputs.column(j).iter().copied())
            .map(format_float)
            .collect()
    });
    write_table(path, &header, body)
}

fn parse_float(path: &Path, s: &str) -> Result<f64, CliError> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| CliError::artifact(path, format!("{s:?} is not a number")))
}

/// Reads a file written by [`write_trajectory`]; the header fixes the dimensions.
pub fn read_trajectory(path: &Path, grid: &TimeGrid) -> Result<Trajectory, CliError> {
    let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut r = csv::Reader::from_reader(std::io::BufReader::new(file));
    let header = r.headers().map_err(|e| CliError::artifact(path, e))?.clone();
    let count = |prefix: char| header.iter().filter(|h| h.starts_with(prefix) && h[1..].parse::<usize>().is_ok()).count();
    let (m, n, p) = (count('u'), count('x'), count('y'));
    if header.get(0) != Some("t") || header.len() != 1 + m + n + p {
        return Err(CliError::artifact(path, "expected columns t, u1.., x1.., y1.."));
    }
    let mut times = Vec::with_capacity(grid.samples);
    let mut values: Vec<Vec<f64>> = Vec::with_capacity(grid.samples);
    for record in r.records() {
        let record = record.map_err(|e| CliError::artifact(path, e))?;
        let row = record.iter().map(|s| parse_float(path, s)).collect::<Result<Vec<_>, _>>()?;
        times.push(row[0]);
        values.push(row);
    }
    if values.len() != grid.samples {
        return Err(CliError::artifact(
            path,
            format!("{} rows, but the configured grid has {} samples", values.len(), grid.samples),
        ));
    }
    let block = |offset: usize, dim: usize| DMatrix::from_fn(dim, values.len(), |i, j| values[j][offset + i]);
    Ok(Trajectory {
        grid: *grid,
        times,
        inputs: block(1, m),
        states: block(1 + m, n),
        outputs: block(1 + m + n, p),
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    let mut f = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| CliError::io(path, e))
}
