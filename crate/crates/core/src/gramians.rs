//! Excitation experiments, controllability/observability sample sets and the linear
//! empirical-Gramian baseline.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::{jittered_cholesky, reduced_svd, symmetrize, ToleranceConfig};
use crate::systems::{impulse_response, observability_response, ControlSystem, TimeGrid, Trajectory};

/// Formats a float with 17 significant digits, which round-trips every `f64` exactly.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Impulse-response and initial-state-response samples on a common grid.
///
/// Both sample sets are time-major: column `i * m + j` of `ctrl_samples` is the state at
/// `t_{i+1}` after an impulse on input `j`, and column `i * p + j` of `obs_samples` holds
/// output `j` at `t_{i+1}` for every unit initial state (entry `k` comes from `x0 = e_k`).
#[derive(Debug, Clone, PartialEq)]
pub struct GramianDataset {
    pub grid: TimeGrid,
    pub inputs: usize,
    pub outputs: usize,
    pub ctrl_samples: DMatrix<f64>,
    pub obs_samples: DMatrix<f64>,
}

impl GramianDataset {
    pub fn state_dim(&self) -> usize {
        self.ctrl_samples.nrows()
    }

    /// Assembles the sample sets from raw runs (one impulse run per input, one initial-state
    /// run per state coordinate).
    pub fn from_runs(grid: TimeGrid, impulse_runs: &[Trajectory], ic_runs: &[Trajectory]) -> Result<Self> {
        let m = impulse_runs.len();
        let n = ic_runs.len();
        let big_n = grid.samples;
        if m == 0 {
            return Err(Error::Degenerate("system has no inputs".into()));
        }
        let p = ic_runs.first().map(|r| r.outputs.nrows()).unwrap_or(0);
        if p == 0 {
            return Err(Error::Degenerate("system has no outputs".into()));
        }
        let mut ctrl = DMatrix::zeros(n, big_n * m);
        for (j, run) in impulse_runs.iter().enumerate() {
            if run.states.nrows() != n || run.states.ncols() != big_n {
                return Err(Error::dims("impulse run states", n * big_n, run.states.len()));
            }
            for i in 0..big_n {
                ctrl.set_column(i * m + j, &run.states.column(i));
            }
        }
        let mut obs = DMatrix::zeros(n, big_n * p);
        for (k, run) in ic_runs.iter().enumerate() {
            if run.outputs.nrows() != p || run.outputs.ncols() != big_n {
                return Err(Error::dims("initial-state run outputs", p * big_n, run.outputs.len()));
            }
            for i in 0..big_n {
                for j in 0..p {
                    obs[(k, i * p + j)] = run.outputs[(j, i)];
                }
            }
        }
        Ok(Self {
            grid,
            inputs: m,
            outputs: p,
            ctrl_samples: ctrl,
            obs_samples: obs,
        })
    }

    /// Runs the `m` impulse experiments and `n` initial-state experiments (in parallel).
    pub fn collect(sys: &dyn ControlSystem, grid: &TimeGrid) -> Result<Self> {
        grid.validate()?;
        let m = sys.input_dim();
        let n = sys.state_dim();
        let impulse_runs = (0..m)
            .into_par_iter()
            .map(|j| impulse_response(sys, j, grid))
            .collect::<Result<Vec<_>>>()?;
        let ic_runs = (0..n)
            .into_par_iter()
            .map(|k| observability_response(sys, k, grid))
            .collect::<Result<Vec<_>>>()?;
        Self::from_runs(*grid, &impulse_runs, &ic_runs)
    }

    /// `t_final / (m N)`
    pub fn ctrl_scale(&self) -> f64 {
        self.grid.t_final / (self.inputs * self.grid.samples) as f64
    }

    /// `t_final / (p N)`
    pub fn obs_scale(&self) -> f64 {
        self.grid.t_final / (self.outputs * self.grid.samples) as f64
    }

    /// Writes one CSV row per sample: `tag,time_index,channel,x1..xn`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let n = self.state_dim();
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["tag".to_string(), "time_index".into(), "channel".into()];
        header.extend((1..=n).map(|k| format!("x{k}")));
        w.write_record(&header).map_err(csv_err)?;
        for (tag, samples, per_time) in [
            ("ctrl", &self.ctrl_samples, self.inputs),
            ("obs", &self.obs_samples, self.outputs),
        ] {
            for c in 0..samples.ncols() {
                let mut row = vec![
                    tag.to_string(),
                    (c / per_time + 1).to_string(),
                    (c % per_time + 1).to_string(),
                ];
                row.extend(samples.column(c).iter().map(|&v| format_float(v)));
                w.write_record(&row).map_err(csv_err)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a dataset written by [`write_csv`](Self::write_csv). The grid is not part of the
    /// file and must match the one the samples were collected on.
    pub fn read_csv<R: Read>(reader: R, grid: &TimeGrid) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers().map_err(csv_err)?.clone();
        if header.len() < 4 || &header[0] != "tag" || &header[1] != "time_index" || &header[2] != "channel" {
            return Err(Error::Parse("dataset header must start with tag,time_index,channel,x1".into()));
        }
        let n = header.len() - 3;
        let mut ctrl: Vec<(usize, usize, Vec<f64>)> = Vec::new();
        let mut obs: Vec<(usize, usize, Vec<f64>)> = Vec::new();
        for (line, record) in r.records().enumerate() {
            let record = record.map_err(csv_err)?;
            let parse_index = |k: usize| -> Result<usize> {
                record[k]
                    .parse::<usize>()
                    .ok()
                    .filter(|&v| v >= 1)
                    .ok_or_else(|| Error::Parse(format!("row {}: bad index {:?}", line + 2, &record[k])))
            };
            let i = parse_index(1)?;
            let j = parse_index(2)?;
            let values = (3..record.len())
                .map(|k| {
                    record[k]
                        .parse::<f64>()
                        .map_err(|_| Error::Parse(format!("row {}: bad number {:?}", line + 2, &record[k])))
                })
                .collect::<Result<Vec<_>>>()?;
            if values.len() != n {
                return Err(Error::dims("dataset row entries", n, values.len()));
            }
            match &record[0] {
                "ctrl" => ctrl.push((i, j, values)),
                "obs" => obs.push((i, j, values)),
                other => return Err(Error::Parse(format!("row {}: unknown tag {other:?}", line + 2))),
            }
        }
        let assemble = |rows: Vec<(usize, usize, Vec<f64>)>, what: &str| -> Result<(usize, DMatrix<f64>)> {
            let big_n = grid.samples;
            if rows.is_empty() || !rows.len().is_multiple_of(big_n) {
                return Err(Error::Parse(format!(
                    "{what} rows: {} is not a positive multiple of the {big_n} grid samples",
                    rows.len()
                )));
            }
            let channels = rows.len() / big_n;
            let mut m = DMatrix::zeros(n, rows.len());
            let mut seen = vec![false; rows.len()];
            for (i, j, values) in rows {
                if i > big_n || j > channels {
                    return Err(Error::Parse(format!("{what} row index ({i}, {j}) out of range")));
                }
                let c = (i - 1) * channels + (j - 1);
                if std::mem::replace(&mut seen[c], true) {
                    return Err(Error::Parse(format!("{what} row ({i}, {j}) appears twice")));
                }
                m.set_column(c, &DVector::from_vec(values));
            }
            Ok((channels, m))
        };
        let (inputs, ctrl_samples) = assemble(ctrl, "ctrl")?;
        let (outputs, obs_samples) = assemble(obs, "obs")?;
        Ok(Self {
            grid: *grid,
            inputs,
            outputs,
            ctrl_samples,
            obs_samples,
        })
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

/// Empirical controllability and observability Gramians with their scale factors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalGramianPair {
    pub controllability: DMatrix<f64>,
    pub observability: DMatrix<f64>,
    pub ctrl_scale: f64,
    pub obs_scale: f64,
}

/// `W_c = t_final/(mN) Σ x xᵀ` over the impulse samples and `W_o = t_final/(pN) Σ d dᵀ` over the
/// observability samples.
pub fn empirical_gramians(ds: &GramianDataset) -> Result<EmpiricalGramianPair> {
    if ds.ctrl_samples.ncols() == 0 || ds.obs_samples.ncols() == 0 {
        return Err(Error::InvalidArgument("empty gramian dataset".into()));
    }
    let ctrl_scale = ds.ctrl_scale();
    let obs_scale = ds.obs_scale();
    let wc = &ds.ctrl_samples * ds.ctrl_samples.transpose() * ctrl_scale;
    let wo = &ds.obs_samples * ds.obs_samples.transpose() * obs_scale;
    Ok(EmpiricalGramianPair {
        controllability: symmetrize(&wc),
        observability: symmetrize(&wo),
        ctrl_scale,
        obs_scale,
    })
}

/// Balancing transform and Hankel values of a Gramian pair.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearBalancing {
    /// `T` with `T W_c Tᵀ = T^{-ᵀ} W_o T^{-1} = diag(hankel)`.
    pub transform: DMatrix<f64>,
    pub inverse: DMatrix<f64>,
    /// Descending.
    pub hankel: DVector<f64>,
}

/// Square-root balancing: `W_o + jitter·I = Z Zᵀ`, `Zᵀ W_c Z = U Σ² Uᵀ`, `T = Σ^{-1/2} Uᵀ Zᵀ`.
pub fn linear_balance(g: &EmpiricalGramianPair, tol: &ToleranceConfig) -> Result<LinearBalancing> {
    let n = g.controllability.nrows();
    if g.observability.nrows() != n {
        return Err(Error::dims("gramian pair", n, g.observability.nrows()));
    }
    let z = jittered_cholesky(&g.observability, tol)?;
    let inner = symmetrize(&(z.transpose() * &g.controllability * &z));
    let svd = reduced_svd(&inner);
    let hankel = svd.singular_values.map(f64::sqrt);
    if hankel[0] <= 0.0 {
        return Err(Error::Degenerate("controllability gramian is zero".into()));
    }
    let cut = tol.pinv_rtol * hankel[0];
    if let Some(k) = hankel.iter().position(|&s| s <= cut) {
        return Err(Error::RankDeficient(format!(
            "Hankel value {k} is {:e}, below {cut:e}; the pair cannot be balanced with a square transform",
            hankel[k]
        )));
    }
    let zt = z.transpose();
    let u = svd.u;
    let mut transform = u.transpose() * &zt;
    let mut inverse = zt
        .solve_upper_triangular(&u)
        .ok_or_else(|| Error::RankDeficient("observability factor is singular".into()))?;
    for k in 0..n {
        let s = hankel[k].sqrt();
        transform.row_mut(k).scale_mut(1.0 / s);
        inverse.column_mut(k).scale_mut(s);
    }
    Ok(LinearBalancing {
        transform,
        inverse,
        hankel,
    })
}
