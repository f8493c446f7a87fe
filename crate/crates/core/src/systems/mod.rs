//! Control systems, input signals and fixed-step simulation.

mod integrate;
mod models;
mod signal;

pub use integrate::{impulse_response, integrate, observability_response, rk4, TimeGrid, Trajectory};
pub use models::{builtin, check_equilibrium, Benchmark7d, BUILTIN_SYSTEMS, ControlSystem, LinearSystem, Monomial, PolynomialSystem};
pub use signal::{eval_input, Side, Signal};
