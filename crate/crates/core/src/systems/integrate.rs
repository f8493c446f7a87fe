use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::models::ControlSystem;
use super::signal::{eval_input, Side, Signal};
use crate::error::{Error, Result};

/// Regular sampling grid `t_i = (t_final / samples) · i`, `i = 1..=samples`, integrated with
/// `substeps` RK4 steps per sample interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGrid {
    pub t_final: f64,
    pub samples: usize,
    #[serde(default = "one")]
    pub substeps: usize,
}

fn one() -> usize {
    1
}

impl TimeGrid {
    pub fn new(t_final: f64, samples: usize, substeps: usize) -> Result<Self> {
        let grid = Self {
            t_final,
            samples,
            substeps,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return Err(Error::OutOfRange {
                what: "t_final",
                value: self.t_final,
                range: "finite and > 0".into(),
            });
        }
        if self.samples == 0 {
            return Err(Error::InvalidArgument("grid needs at least one sample".into()));
        }
        if self.substeps == 0 {
            return Err(Error::InvalidArgument("grid needs at least one substep".into()));
        }
        Ok(())
    }

    /// Sample spacing `t_final / samples`.
    pub fn sample_interval(&self) -> f64 {
        self.t_final / self.samples as f64
    }

    /// Integration step.
    pub fn step(&self) -> f64 {
        self.t_final / (self.samples * self.substeps) as f64
    }

    pub fn total_steps(&self) -> usize {
        self.samples * self.substeps
    }

    /// Time after `k` integration steps.
    pub fn step_time(&self, k: usize) -> f64 {
        self.t_final * k as f64 / self.total_steps() as f64
    }

    /// Sample time `t_i`, `i` counted from 1.
    pub fn sample_time(&self, i: usize) -> f64 {
        self.t_final * i as f64 / self.samples as f64
    }

    pub fn sample_times(&self) -> Vec<f64> {
        (1..=self.samples).map(|i| self.sample_time(i)).collect()
    }
}

/// States, inputs and outputs at the grid's sample times (one column per sample).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub grid: TimeGrid,
    pub times: Vec<f64>,
    pub states: DMatrix<f64>,
    pub inputs: DMatrix<f64>,
    pub outputs: DMatrix<f64>,
}

/// Fixed-step classical RK4 for `ẋ = rhs(x, u(t))`, returning the state at each sample time.
///
/// Stage inputs use one-sided limits at the step ends (`u(t⁺)` for the first stage, `u((t+h)⁻)`
/// for the last) so inputs with jumps on step boundaries are integrated as the piecewise-smooth
/// functions they are. `after_step` sees the global step count and may modify the state.
pub fn rk4<F, P>(
    x0: &DVector<f64>,
    inputs: &[Signal],
    grid: &TimeGrid,
    mut rhs: F,
    mut after_step: P,
) -> Result<DMatrix<f64>>
where
    F: FnMut(&DVector<f64>, &DVector<f64>) -> Result<DVector<f64>>,
    P: FnMut(usize, &mut DVector<f64>) -> Result<()>,
{
    grid.validate()?;
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("initial state is not finite".into()));
    }
    let n = x0.len();
    let h = grid.step();
    let mut states = DMatrix::zeros(n, grid.samples);
    let mut x = x0.clone();
    let mut k = 0;
    for i in 0..grid.samples {
        for _ in 0..grid.substeps {
            let t0 = grid.step_time(k);
            let t1 = grid.step_time(k + 1);
            let tm = 0.5 * (t0 + t1);
            let u_start = eval_input(inputs, t0, Side::Right);
            let u_mid = eval_input(inputs, tm, Side::Point);
            let u_end = eval_input(inputs, t1, Side::Left);
            let k1 = rhs(&x, &u_start)?;
            let k2 = rhs(&(&x + &k1 * (0.5 * h)), &u_mid)?;
            let k3 = rhs(&(&x + &k2 * (0.5 * h)), &u_mid)?;
            let k4 = rhs(&(&x + &k3 * h), &u_end)?;
            x += (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0);
            k += 1;
            after_step(k, &mut x)?;
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::IntegrationDiverged { time: t1 });
            }
        }
        states.set_column(i, &x);
    }
    Ok(states)
}

fn sampled_inputs(inputs: &[Signal], grid: &TimeGrid) -> DMatrix<f64> {
    let mut u = DMatrix::zeros(inputs.len(), grid.samples);
    for i in 0..grid.samples {
        u.set_column(i, &eval_input(inputs, grid.sample_time(i + 1), Side::Point));
    }
    u
}

/// Simulates `sys` from `x0` under one signal per input channel.
pub fn integrate(
    sys: &dyn ControlSystem,
    x0: &DVector<f64>,
    inputs: &[Signal],
    grid: &TimeGrid,
) -> Result<Trajectory> {
    if x0.len() != sys.state_dim() {
        return Err(Error::dims("initial state", sys.state_dim(), x0.len()));
    }
    if inputs.len() != sys.input_dim() {
        return Err(Error::dims("input signals", sys.input_dim(), inputs.len()));
    }
    let states = rk4(x0, inputs, grid, |x, u| Ok(sys.dynamics(x, u)), |_, _| Ok(()))?;
    let mut outputs = DMatrix::zeros(sys.output_dim(), grid.samples);
    for (i, x) in states.column_iter().enumerate() {
        outputs.set_column(i, &sys.output(&x.clone_owned()));
    }
    Ok(Trajectory {
        grid: *grid,
        times: grid.sample_times(),
        inputs: sampled_inputs(inputs, grid),
        states,
        outputs,
    })
}

/// Response from rest to a unit impulse on input `channel` (0-based), realized as a pulse of
/// height `1/h` over the first integration step.
pub fn impulse_response(sys: &dyn ControlSystem, channel: usize, grid: &TimeGrid) -> Result<Trajectory> {
    let m = sys.input_dim();
    if channel >= m {
        return Err(Error::InvalidArgument(format!(
            "impulse channel {channel} out of range for {m} inputs"
        )));
    }
    let mut inputs = vec![Signal::Zero; m];
    inputs[channel] = Signal::Impulse { width: grid.step() };
    integrate(sys, &DVector::zeros(sys.state_dim()), &inputs, grid)
        .map_err(|e| e.in_run(format!("impulse on input {channel}")))
}

/// Unforced response from the unit initial state `e_coordinate` (0-based).
pub fn observability_response(
    sys: &dyn ControlSystem,
    coordinate: usize,
    grid: &TimeGrid,
) -> Result<Trajectory> {
    let n = sys.state_dim();
    if coordinate >= n {
        return Err(Error::InvalidArgument(format!(
            "initial-state coordinate {coordinate} out of range for {n} states"
        )));
    }
    let mut x0 = DVector::zeros(n);
    x0[coordinate] = 1.0;
    let inputs = vec![Signal::Zero; sys.input_dim()];
    integrate(sys, &x0, &inputs, grid).map_err(|e| e.in_run(format!("initial state e{coordinate}")))
}
