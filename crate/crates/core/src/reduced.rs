//! Closed reduced-order system `ẋ_r = J_Π(x̂(x_r)) f̂(x_r, u)`, `y = ĥ(x_r)`.

use std::cell::RefCell;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::balancing::BalancedReduction;
use crate::error::{Error, Result};
use crate::kernels::{col, KernelSpec};
use crate::numerics::{pinv, ToleranceConfig};
use crate::rkhs::{RegressionDataset, RkhsModel};
use crate::systems::{rk4, ControlSystem, Signal, TimeGrid, Trajectory};

/// Learned vector field on the reduced state.
#[derive(Debug, Clone, PartialEq)]
pub enum DynamicsModel {
    /// One model on `(x_r, u)` predicting all `n` state derivatives.
    Joint(RkhsModel),
    /// One single-output model on `(x_r, u)` per state coordinate.
    PerCoordinate(Vec<RkhsModel>),
    /// `f̂(x_r) + Σ_i ĝ_i(x_r) u_i` for input-affine systems.
    Separable {
        drift: RkhsModel,
        input_gains: Vec<RkhsModel>,
    },
}

fn joined(xr: &[f64], u: &[f64]) -> Vec<f64> {
    let mut z = Vec::with_capacity(xr.len() + u.len());
    z.extend_from_slice(xr);
    z.extend_from_slice(u);
    z
}

impl DynamicsModel {
    /// Number of state derivatives predicted.
    pub fn state_dim(&self) -> usize {
        match self {
            DynamicsModel::Joint(m) => m.output_dim(),
            DynamicsModel::PerCoordinate(ms) => ms.len(),
            DynamicsModel::Separable { drift, .. } => drift.output_dim(),
        }
    }

    pub fn eval(&self, xr: &[f64], u: &[f64]) -> Result<DVector<f64>> {
        match self {
            DynamicsModel::Joint(m) => m.predict(&joined(xr, u)),
            DynamicsModel::PerCoordinate(ms) => {
                let z = joined(xr, u);
                let mut out = DVector::zeros(ms.len());
                for (i, m) in ms.iter().enumerate() {
                    out[i] = m.predict(&z)?[0];
                }
                Ok(out)
            }
            DynamicsModel::Separable { drift, input_gains } => {
                if u.len() != input_gains.len() {
                    return Err(Error::dims("separable model inputs", input_gains.len(), u.len()));
                }
                let mut out = drift.predict(xr)?;
                for (g, &ui) in input_gains.iter().zip(u) {
                    out += g.predict(xr)? * ui;
                }
                Ok(out)
            }
        }
    }

    /// Multiplies every coefficient by `factor` (used to build reference models).
    pub fn scale(&mut self, factor: f64) {
        match self {
            DynamicsModel::Joint(m) => m.coefficients *= factor,
            DynamicsModel::PerCoordinate(ms) => ms.iter_mut().for_each(|m| m.coefficients *= factor),
            DynamicsModel::Separable { drift, input_gains } => {
                drift.coefficients *= factor;
                input_gains.iter_mut().for_each(|m| m.coefficients *= factor);
            }
        }
    }
}

/// Reduced coordinates of every state in a trajectory, `q × N`.
pub fn reduce_states(br: &BalancedReduction, states: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(br.order(), states.ncols());
    for j in 0..states.ncols() {
        out.set_column(j, &br.reduce(col(states, j))?);
    }
    Ok(out)
}

/// `{((Π(x_j), u_j), f(x_j, u_j))}` from a simulated trajectory.
pub fn dynamics_dataset(
    sys: &dyn ControlSystem,
    br: &BalancedReduction,
    traj: &Trajectory,
    bias: bool,
) -> Result<RegressionDataset> {
    let reduced = reduce_states(br, &traj.states)?;
    let inputs = DMatrix::from_fn(reduced.nrows() + traj.inputs.nrows(), reduced.ncols(), |i, j| {
        if i < reduced.nrows() {
            reduced[(i, j)]
        } else {
            traj.inputs[(i - reduced.nrows(), j)]
        }
    });
    let mut targets = DMatrix::zeros(sys.state_dim(), traj.states.ncols());
    for j in 0..traj.states.ncols() {
        let x = traj.states.column(j).clone_owned();
        let u = traj.inputs.column(j).clone_owned();
        targets.set_column(j, &sys.dynamics(&x, &u));
    }
    RegressionDataset::new(inputs, targets, bias)
}

/// Drift `{(Π(x_j), f(x_j, 0))}` and one input-gain set `{(Π(x_j), f(x_j, e_i) − f(x_j, 0))}`
/// per input, for input-affine systems.
pub fn separable_datasets(
    sys: &dyn ControlSystem,
    br: &BalancedReduction,
    traj: &Trajectory,
    bias: bool,
) -> Result<(RegressionDataset, Vec<RegressionDataset>)> {
    let reduced = reduce_states(br, &traj.states)?;
    let (n, m, l) = (sys.state_dim(), sys.input_dim(), traj.states.ncols());
    let mut drift = DMatrix::zeros(n, l);
    let mut gains = vec![DMatrix::zeros(n, l); m];
    for j in 0..l {
        let x = traj.states.column(j).clone_owned();
        let f0 = sys.dynamics(&x, &DVector::zeros(m));
        for (i, g) in gains.iter_mut().enumerate() {
            let mut e = DVector::zeros(m);
            e[i] = 1.0;
            g.set_column(j, &(sys.dynamics(&x, &e) - &f0));
        }
        drift.set_column(j, &f0);
    }
    let drift = RegressionDataset::new(reduced.clone(), drift, bias)?;
    let gains = gains
        .into_iter()
        .map(|g| RegressionDataset::new(reduced.clone(), g, bias))
        .collect::<Result<Vec<_>>>()?;
    Ok((drift, gains))
}

/// `{(Π(x_j), y_j)}` from a simulated trajectory.
pub fn output_dataset(br: &BalancedReduction, traj: &Trajectory, bias: bool) -> Result<RegressionDataset> {
    RegressionDataset::new(reduce_states(br, &traj.states)?, traj.outputs.clone(), bias)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Refresh {
    Never,
    /// Re-expand about the current preimage estimate every `k` integration steps.
    EveryKSteps(usize),
}

/// How the Jacobian of `Π` at the unknown preimage of `x_r` is approximated.
#[derive(Debug, Clone, PartialEq)]
pub enum JacobianMode {
    /// First-order inverse of `Π` about an expansion point.
    Taylor { expansion: DVector<f64>, refresh: Refresh },
    /// Closed-form kernel derivative through the preimage in feature space (polynomial kernels).
    KernelProperty,
}

/// First-order expansion of `Π` about `point`, with the pseudoinverse of its Jacobian cached.
#[derive(Debug, Clone, PartialEq)]
pub struct TaylorExpansion {
    pub point: DVector<f64>,
    pub pi_at_point: DVector<f64>,
    pub jacobian_pinv: DMatrix<f64>,
}

impl TaylorExpansion {
    pub fn new(br: &BalancedReduction, point: &DVector<f64>, tol: &ToleranceConfig) -> Result<Self> {
        let jac = br.jacobian_of_pi(point.as_slice())?;
        if jac.amax() == 0.0 {
            return Err(Error::Degenerate(
                "Jacobian of the reduction map vanishes at the expansion point".into(),
            ));
        }
        Ok(Self {
            point: point.clone(),
            pi_at_point: br.reduce(point.as_slice())?,
            jacobian_pinv: pinv(&jac, tol),
        })
    }

    /// `J_Π(a)† (x_r − Π(a)) + a`
    pub fn preimage(&self, xr: &DVector<f64>) -> DVector<f64> {
        &self.jacobian_pinv * (xr - &self.pi_at_point) + &self.point
    }
}

/// Least-norm first-order preimage of `x_r` about `a`.
pub fn taylor_preimage(
    br: &BalancedReduction,
    a: &DVector<f64>,
    xr: &DVector<f64>,
    tol: &ToleranceConfig,
) -> Result<DVector<f64>> {
    if xr.len() != br.order() {
        return Err(Error::dims("reduced state", br.order(), xr.len()));
    }
    Ok(TaylorExpansion::new(br, a, tol)?.preimage(xr))
}

/// Precomputed pieces of the closed-form Jacobian
/// `row_l = d · φ(s_l) · y_lᵀ`, `s_l = ⟨x_r, M Π(y_l)⟩`, `φ(s) = (sign(s)|s|^{1/d})^{d−1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelPropertyJacobian {
    degree: u32,
    /// `M Π(y_l)` for every sample, `q × L`.
    weighted_samples: DMatrix<f64>,
    /// `T_qᵀ`, `q × L`.
    retained: DMatrix<f64>,
    /// `L × n`
    samples_t: DMatrix<f64>,
}

/// Sign-preserving `s^{(d−1)/d}`.
fn odd_root_power(s: f64, degree: u32) -> f64 {
    if degree == 1 {
        return 1.0;
    }
    let root = s.signum() * s.abs().powf(1.0 / degree as f64);
    root.powi(degree as i32 - 1)
}

impl KernelPropertyJacobian {
    pub fn new(br: &BalancedReduction) -> Result<Self> {
        let degree = match br.fmap.kernel {
            KernelSpec::Polynomial { degree, .. } => degree,
            KernelSpec::Linear => 1,
            KernelSpec::Gaussian { .. } => {
                return Err(Error::Unsupported(
                    "the closed-form Jacobian needs a polynomial or linear kernel".into(),
                ))
            }
        };
        let metric = br.metric_matrix()?;
        Ok(Self {
            degree,
            weighted_samples: metric.inverse * br.reduced_samples()?,
            retained: br.retained.clone(),
            samples_t: br.fmap.samples.transpose(),
        })
    }

    /// Per-sample weights `d · φ(s_l)`.
    pub fn weights(&self, xr: &DVector<f64>) -> Result<DVector<f64>> {
        if xr.len() != self.retained.nrows() {
            return Err(Error::dims("reduced state", self.retained.nrows(), xr.len()));
        }
        let s = self.weighted_samples.tr_mul(xr);
        let d = self.degree;
        Ok(s.map(|v| d as f64 * odd_root_power(v, d)))
    }

    /// Approximate `J_Π` at the preimage of `x_r`, `q × n`.
    pub fn at(&self, xr: &DVector<f64>) -> Result<DMatrix<f64>> {
        let w = self.weights(xr)?;
        let mut scaled = self.retained.clone();
        for (l, mut c) in scaled.column_iter_mut().enumerate() {
            c *= w[l];
        }
        Ok(scaled * &self.samples_t)
    }
}

/// Closed-form Jacobian at the feature-space preimage of `x_r`.
pub fn kernel_property_jacobian(br: &BalancedReduction, xr: &DVector<f64>) -> Result<DMatrix<f64>> {
    KernelPropertyJacobian::new(br)?.at(xr)
}

#[derive(Debug, Clone)]
enum JacobianState {
    Taylor(TaylorExpansion, Refresh),
    KernelProperty(KernelPropertyJacobian),
}

/// Reduction map, learned dynamics and learned output map.
#[derive(Debug, Clone)]
pub struct ReducedSystem {
    pub reduction: BalancedReduction,
    pub dynamics: DynamicsModel,
    pub output: RkhsModel,
    pub tol: ToleranceConfig,
    jacobian: JacobianState,
}

impl ReducedSystem {
    pub fn new(
        reduction: BalancedReduction,
        dynamics: DynamicsModel,
        output: RkhsModel,
        mode: JacobianMode,
        tol: ToleranceConfig,
    ) -> Result<Self> {
        let (n, q) = (reduction.state_dim(), reduction.order());
        if dynamics.state_dim() != n {
            return Err(Error::dims("learned dynamics outputs", n, dynamics.state_dim()));
        }
        if output.input_dim() != q {
            return Err(Error::dims("output model inputs", q, output.input_dim()));
        }
        let jacobian = match mode {
            JacobianMode::Taylor { expansion, refresh } => {
                if expansion.len() != n {
                    return Err(Error::dims("expansion point", n, expansion.len()));
                }
                if refresh == Refresh::EveryKSteps(0) {
                    return Err(Error::InvalidArgument("refresh interval must be at least 1 step".into()));
                }
                JacobianState::Taylor(TaylorExpansion::new(&reduction, &expansion, &tol)?, refresh)
            }
            JacobianMode::KernelProperty => JacobianState::KernelProperty(KernelPropertyJacobian::new(&reduction)?),
        };
        Ok(Self {
            reduction,
            dynamics,
            output,
            tol,
            jacobian,
        })
    }

    pub fn order(&self) -> usize {
        self.reduction.order()
    }

    fn rhs(&self, expansion: Option<&TaylorExpansion>, xr: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        let f = self.dynamics.eval(xr.as_slice(), u.as_slice())?;
        let jac = match (&self.jacobian, expansion) {
            (JacobianState::KernelProperty(kp), _) => kp.at(xr)?,
            (JacobianState::Taylor(..), Some(e)) => self.reduction.jacobian_of_pi(e.preimage(xr).as_slice())?,
            (JacobianState::Taylor(e, _), None) => self.reduction.jacobian_of_pi(e.preimage(xr).as_slice())?,
        };
        Ok(jac * f)
    }

    /// Reduced vector field with the initial expansion point.
    pub fn closed_rhs(&self, xr: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        if xr.len() != self.order() {
            return Err(Error::dims("reduced state", self.order(), xr.len()));
        }
        self.rhs(None, xr, u)
    }

    /// `ĥ(x_r)`
    pub fn output_of(&self, xr: &[f64]) -> Result<DVector<f64>> {
        self.output.predict(xr)
    }

    /// RK4 on the reduced vector field; outputs are `ĥ` at each sample.
    pub fn simulate(&self, xr0: &DVector<f64>, inputs: &[Signal], grid: &TimeGrid) -> Result<Trajectory> {
        if xr0.len() != self.order() {
            return Err(Error::dims("reduced initial state", self.order(), xr0.len()));
        }
        let (expansion, refresh) = match &self.jacobian {
            JacobianState::Taylor(e, r) => (Some(e.clone()), *r),
            JacobianState::KernelProperty(_) => (None, Refresh::Never),
        };
        let expansion = RefCell::new(expansion);
        let states = rk4(
            xr0,
            inputs,
            grid,
            |x, u| self.rhs(expansion.borrow().as_ref(), x, u),
            |step, x| {
                if let Refresh::EveryKSteps(k) = refresh {
                    if step % k == 0 {
                        let mut slot = expansion.borrow_mut();
                        if let Some(e) = slot.as_ref() {
                            let point = e.preimage(x);
                            if point.iter().all(|v| v.is_finite()) {
                                *slot = Some(TaylorExpansion::new(&self.reduction, &point, &self.tol)?);
                            }
                        }
                    }
                }
                Ok(())
            },
        )?;
        let mut outputs = DMatrix::zeros(self.output.output_dim(), grid.samples);
        for j in 0..grid.samples {
            outputs.set_column(j, &self.output_of(col(&states, j))?);
        }
        let mut sampled = DMatrix::zeros(inputs.len(), grid.samples);
        for j in 0..grid.samples {
            let t = grid.sample_time(j + 1);
            for (i, s) in inputs.iter().enumerate() {
                sampled[(i, j)] = s.value(t);
            }
        }
        Ok(Trajectory {
            grid: *grid,
            times: grid.sample_times(),
            states,
            inputs: sampled,
            outputs,
        })
    }
}

/// Output error of a reduced simulation against the reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonMetrics {
    pub rmse: f64,
    /// `‖y − ŷ‖₂ / ‖y‖₂` over all samples and channels.
    pub relative_l2: f64,
    pub max_abs_err: f64,
}

pub fn compare(y: &DMatrix<f64>, y_hat: &DMatrix<f64>) -> Result<ComparisonMetrics> {
    if y.shape() != y_hat.shape() {
        return Err(Error::dims("compared outputs", y.len(), y_hat.len()));
    }
    if y.is_empty() {
        return Err(Error::InvalidArgument("nothing to compare".into()));
    }
    let diff = y - y_hat;
    let err = diff.norm();
    let reference = y.norm();
    let relative_l2 = if reference > 0.0 {
        err / reference
    } else if err == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(ComparisonMetrics {
        rmse: err / (y.len() as f64).sqrt(),
        relative_l2,
        max_abs_err: diff.amax(),
    })
}
