use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Input-affine or general nonlinear system `ẋ = f(x, u)`, `y = h(x)`.
pub trait ControlSystem: Send + Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn dynamics(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64>;
    fn output(&self, x: &DVector<f64>) -> DVector<f64>;
}

/// Fails unless `f(0, 0) = 0` and `h(0) = 0`.
pub fn check_equilibrium(sys: &dyn ControlSystem) -> Result<()> {
    let x = DVector::zeros(sys.state_dim());
    let u = DVector::zeros(sys.input_dim());
    let fx = sys.dynamics(&x, &u);
    let hx = sys.output(&x);
    if fx.len() != sys.state_dim() {
        return Err(Error::dims("system dynamics", sys.state_dim(), fx.len()));
    }
    if hx.len() != sys.output_dim() {
        return Err(Error::dims("system output", sys.output_dim(), hx.len()));
    }
    if fx.amax() != 0.0 || hx.amax() != 0.0 {
        return Err(Error::InvalidArgument(format!(
            "origin is not an equilibrium with zero output (|f(0,0)| = {:e}, |h(0)| = {:e})",
            fx.amax(),
            hx.amax()
        )));
    }
    Ok(())
}

/// Names accepted by [`builtin`].
pub const BUILTIN_SYSTEMS: &[&str] = &["benchmark_7d"];

/// Looks up a registered benchmark system; every entry is checked to rest at the origin.
pub fn builtin(name: &str) -> Result<Box<dyn ControlSystem>> {
    let sys: Box<dyn ControlSystem> = match name {
        "benchmark_7d" => Box::new(Benchmark7d),
        _ => {
            return Err(Error::InvalidArgument(format!(
                "unknown builtin system {name:?} (known: {})",
                BUILTIN_SYSTEMS.join(", ")
            )))
        }
    };
    check_equilibrium(sys.as_ref())?;
    Ok(sys)
}

/// The seven-state, single-input single-output polynomial benchmark.
#[derive(Debug, Clone, Copy, Default)]
pub struct Benchmark7d;

impl ControlSystem for Benchmark7d {
    fn state_dim(&self) -> usize {
        7
    }
    fn input_dim(&self) -> usize {
        1
    }
    fn output_dim(&self) -> usize {
        1
    }

    fn dynamics(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let (x1, x2, x3, x4, x5, x6, x7) = (x[0], x[1], x[2], x[3], x[4], x[5], x[6]);
        let u = u[0];
        let c5 = x5 * x5 * x5;
        DVector::from_vec(vec![
            -x1 * x1 * x1 + u,
            -x2 * x2 * x2 - x1 * x1 * x2 + 3.0 * x1 * x2 * x2 - u,
            -x3 * x3 * x3 + x5 + u,
            -x4 * x4 * x4 + x1 - x2 + x3 + 2.0 * u,
            x1 * x2 * x3 - c5 + u,
            x5 - x6 * x6 * x6 - c5 + 2.0 * u,
            -2.0 * x6 * x6 * x6 + 2.0 * x5 - x7 - c5 + 4.0 * u,
        ])
    }

    fn output(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(
            1,
            x[0] - x[1] * x[1] + x[2] + x[3] * x[2] + x[4] - 2.0 * x[5] + 2.0 * x[6],
        )
    }
}

/// `coefficient * Π x_i^{a_i} * Π u_j^{b_j}`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Monomial {
    pub coefficient: f64,
    #[serde(default)]
    pub state_exponents: Vec<u32>,
    #[serde(default)]
    pub input_exponents: Vec<u32>,
}

impl Monomial {
    fn eval(&self, x: &DVector<f64>, u: &[f64]) -> f64 {
        let mut v = self.coefficient;
        for (xi, &e) in x.iter().zip(&self.state_exponents) {
            if e > 0 {
                v *= xi.powi(e as i32);
            }
        }
        for (uj, &e) in u.iter().zip(&self.input_exponents) {
            if e > 0 {
                v *= uj.powi(e as i32);
            }
        }
        v
    }
}

/// System whose dynamics and output components are sums of monomials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolynomialSystem {
    pub states: usize,
    pub inputs: usize,
    /// One list of terms per state derivative.
    pub dynamics: Vec<Vec<Monomial>>,
    /// One list of terms per output.
    pub outputs: Vec<Vec<Monomial>>,
}

impl PolynomialSystem {
    pub fn new(
        states: usize,
        inputs: usize,
        dynamics: Vec<Vec<Monomial>>,
        outputs: Vec<Vec<Monomial>>,
    ) -> Result<Self> {
        let sys = Self {
            states,
            inputs,
            dynamics,
            outputs,
        };
        sys.validate()?;
        Ok(sys)
    }

    pub fn validate(&self) -> Result<()> {
        if self.states == 0 {
            return Err(Error::InvalidArgument("polynomial system needs at least one state".into()));
        }
        if self.dynamics.len() != self.states {
            return Err(Error::dims("polynomial dynamics rows", self.states, self.dynamics.len()));
        }
        for term in self.dynamics.iter().chain(&self.outputs).flatten() {
            if term.state_exponents.len() > self.states {
                return Err(Error::dims(
                    "monomial state exponents",
                    self.states,
                    term.state_exponents.len(),
                ));
            }
            if term.input_exponents.len() > self.inputs {
                return Err(Error::dims(
                    "monomial input exponents",
                    self.inputs,
                    term.input_exponents.len(),
                ));
            }
            if !term.coefficient.is_finite() {
                return Err(Error::InvalidArgument("monomial coefficient is not finite".into()));
            }
        }
        Ok(())
    }
}

impl ControlSystem for PolynomialSystem {
    fn state_dim(&self) -> usize {
        self.states
    }
    fn input_dim(&self) -> usize {
        self.inputs
    }
    fn output_dim(&self) -> usize {
        self.outputs.len()
    }

    fn dynamics(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.states,
            self.dynamics
                .iter()
                .map(|terms| terms.iter().map(|t| t.eval(x, u.as_slice())).sum()),
        )
    }

    fn output(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.outputs.len(),
            self.outputs
                .iter()
                .map(|terms| terms.iter().map(|t| t.eval(x, &[])).sum()),
        )
    }
}

/// `ẋ = A x + B u`, `y = C x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

impl LinearSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::dims("state matrix columns", n, a.ncols()));
        }
        if b.nrows() != n {
            return Err(Error::dims("input matrix rows", n, b.nrows()));
        }
        if c.ncols() != n {
            return Err(Error::dims("output matrix columns", n, c.ncols()));
        }
        Ok(Self { a, b, c })
    }

    /// Random system whose eigenvalues all have real part at most `-decay`.
    ///
    /// Entries of `A`, `B`, `C` are uniform on `[-1, 1)` (A scaled by `1/√n`), then `A` is
    /// shifted left until the spectral abscissa reaches `-decay`.
    pub fn random_stable(n: usize, m: usize, p: usize, decay: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (n as f64).sqrt();
        let mut a = DMatrix::from_fn(n, n, |_, _| scale * rng.random_range(-1.0..1.0));
        let b = DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0));
        let c = DMatrix::from_fn(p, n, |_, _| rng.random_range(-1.0..1.0));
        let abscissa = a
            .complex_eigenvalues()
            .iter()
            .map(|z| z.re)
            .fold(f64::NEG_INFINITY, f64::max);
        for i in 0..n {
            a[(i, i)] -= abscissa + decay;
        }
        Self { a, b, c }
    }

    pub fn spectral_abscissa(&self) -> f64 {
        self.a
            .complex_eigenvalues()
            .iter()
            .map(|z| z.re)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

impl ControlSystem for LinearSystem {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    fn input_dim(&self) -> usize {
        self.b.ncols()
    }
    fn output_dim(&self) -> usize {
        self.c.nrows()
    }
    fn dynamics(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u
    }
    fn output(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.c * x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    #[test]
    fn registry_resolves_known_names_only() {
        for name in BUILTIN_SYSTEMS {
            let sys = builtin(name).unwrap();
            assert!(sys.state_dim() > 0);
        }
        assert!(matches!(builtin("pendulum"), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn benchmark_values_by_substitution() {
        let sys = Benchmark7d;
        check_equilibrium(&sys).unwrap();
        let e1 = dvector![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(
            sys.dynamics(&e1, &dvector![0.0]),
            dvector![-1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]
        );
        assert_eq!(sys.output(&e1)[0], 1.0);
        assert_eq!(
            sys.dynamics(&DVector::zeros(7), &dvector![1.0]),
            dvector![1.0, -1.0, 1.0, 2.0, 1.0, 2.0, 4.0]
        );
    }

    fn mono(c: f64, xs: &[u32], us: &[u32]) -> Monomial {
        Monomial {
            coefficient: c,
            state_exponents: xs.to_vec(),
            input_exponents: us.to_vec(),
        }
    }

    #[test]
    fn polynomial_system_reproduces_the_benchmark() {
        let sys = PolynomialSystem::new(
            2,
            1,
            vec![
                vec![mono(-1.0, &[3], &[]), mono(1.0, &[], &[1])],
                vec![mono(-1.0, &[0, 3], &[]), mono(-1.0, &[2, 1], &[]), mono(3.0, &[1, 2], &[]), mono(-1.0, &[], &[1])],
            ],
            vec![vec![mono(1.0, &[1], &[]), mono(-1.0, &[0, 2], &[])]],
        )
        .unwrap();
        check_equilibrium(&sys).unwrap();
        let full = Benchmark7d;
        let x = dvector![0.3, -0.7];
        let x7 = dvector![0.3, -0.7, 0.0, 0.0, 0.0, 0.0, 0.0];
        let u = dvector![0.4];
        let f = sys.dynamics(&x, &u);
        let f7 = full.dynamics(&x7, &u);
        assert!((f[0] - f7[0]).abs() < 1e-15);
        assert!((f[1] - f7[1]).abs() < 1e-15);
        assert!((sys.output(&x)[0] - (0.3 - 0.49)).abs() < 1e-15);
    }

    #[test]
    fn polynomial_system_rejects_bad_exponents() {
        let err = PolynomialSystem::new(1, 0, vec![vec![mono(1.0, &[1, 1], &[])]], vec![]);
        assert!(err.is_err());
        let err = PolynomialSystem::new(2, 0, vec![vec![]], vec![]);
        assert!(err.is_err());
    }

    #[test]
    fn offset_system_fails_equilibrium_check() {
        let sys = PolynomialSystem::new(1, 0, vec![vec![mono(1.0, &[], &[])]], vec![]).unwrap();
        assert!(check_equilibrium(&sys).is_err());
    }

    #[test]
    fn random_lti_is_stable_and_seeded() {
        for seed in 0..10 {
            let sys = LinearSystem::random_stable(5, 2, 3, 0.5, seed);
            assert!((sys.spectral_abscissa() + 0.5).abs() < 1e-8);
            assert_eq!(sys, LinearSystem::random_stable(5, 2, 3, 0.5, seed));
        }
        assert_ne!(
            LinearSystem::random_stable(3, 1, 1, 0.5, 1),
            LinearSystem::random_stable(3, 1, 1, 0.5, 2)
        );
    }
}
