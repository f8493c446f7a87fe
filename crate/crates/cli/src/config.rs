//! Declarative pipeline configuration.

use std::path::{Path, PathBuf};

use kernel_mor_core::kernels::KernelSpec;
use kernel_mor_core::reduced::Refresh;
use kernel_mor_core::rkhs::log_grid;
use kernel_mor_core::systems::{builtin, check_equilibrium, LinearSystem, PolynomialSystem};
use kernel_mor_core::{ControlSystem, Signal, TimeGrid, ToleranceConfig};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const SPEC_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub spec_version: u32,
    pub system: SystemConfig,
    /// Grid of the impulse and initial-state runs behind the empirical Gramians.
    pub gramians: TimeGrid,
    pub balancing: BalancingConfig,
    #[serde(default)]
    pub tolerances: ToleranceConfig,
    pub dynamics: DynamicsConfig,
    pub output_map: OutputMapConfig,
    pub lambda_grid: LambdaGrid,
    #[serde(default)]
    pub jacobian: JacobianConfig,
    pub evaluation: EvaluationConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemConfig {
    Builtin { name: String },
    Polynomial(PolynomialSystem),
    /// Row-major `A`, `B`, `C`.
    Linear { a: Vec<Vec<f64>>, b: Vec<Vec<f64>>, c: Vec<Vec<f64>> },
    /// Seeded random stable system; the seed defaults to one derived from the run seed.
    RandomLti {
        states: usize,
        inputs: usize,
        outputs: usize,
        decay: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    Linear,
    Polynomial,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Gamma {
    Value(f64),
    Keyword(AutoKeyword),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AutoKeyword {
    #[serde(rename = "auto")]
    Auto,
}

/// Kernel whose Gaussian width may be left to the mean-distance heuristic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub family: KernelFamily,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degree: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<Gamma>,
}

impl KernelConfig {
    pub fn is_auto(&self) -> bool {
        matches!(self.gamma, Some(Gamma::Keyword(AutoKeyword::Auto)))
    }

    /// Concrete kernel; `auto_gamma` is consulted only for `"gamma": "auto"`.
    pub fn resolve(&self, auto_gamma: impl FnOnce() -> kernel_mor_core::Result<f64>) -> kernel_mor_core::Result<KernelSpec> {
        let k = match self.family {
            KernelFamily::Linear => KernelSpec::Linear,
            KernelFamily::Polynomial => KernelSpec::Polynomial {
                degree: self.degree.unwrap_or(0),
                offset: self.offset.unwrap_or(1.0),
            },
            KernelFamily::Gaussian => KernelSpec::Gaussian {
                gamma: match self.gamma {
                    Some(Gamma::Value(g)) => g,
                    Some(Gamma::Keyword(AutoKeyword::Auto)) => auto_gamma()?,
                    None => f64::NAN,
                },
            },
        };
        k.validate()?;
        Ok(k)
    }

    fn validate(&self, field: &str) -> Result<(), CliError> {
        let stray = |name: &str| CliError::config(format!("{field}.{name}"), format!("not used by the {:?} family", self.family));
        match self.family {
            KernelFamily::Linear => {
                if self.degree.is_some() {
                    return Err(stray("degree"));
                }
                if self.offset.is_some() {
                    return Err(stray("offset"));
                }
                if self.gamma.is_some() {
                    return Err(stray("gamma"));
                }
            }
            KernelFamily::Polynomial => {
                if self.gamma.is_some() {
                    return Err(stray("gamma"));
                }
                if self.degree.is_none() {
                    return Err(CliError::config(format!("{field}.degree"), "required for polynomial kernels"));
                }
            }
            KernelFamily::Gaussian => {
                if self.degree.is_some() {
                    return Err(stray("degree"));
                }
                if self.offset.is_some() {
                    return Err(stray("offset"));
                }
                if self.gamma.is_none() {
                    return Err(CliError::config(format!("{field}.gamma"), "required: a positive number or \"auto\""));
                }
            }
        }
        self.resolve(|| Ok(1.0)).map(|_| ()).map_err(|e| CliError::config(field, e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OrderChoice {
    Fixed(usize),
    Keyword(OrderKeyword),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OrderKeyword {
    #[serde(rename = "auto-gap")]
    AutoGap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BalancingConfig {
    pub kernel: KernelConfig,
    pub order: OrderChoice,
    /// Ratio `σ_k / σ_{k+1}` that counts as a gap for `"auto-gap"`.
    #[serde(default = "default_gap")]
    pub gap_threshold: f64,
    /// Also balance the dataset with Moore's linear method (and Lyapunov Gramians for linear
    /// systems) and write the spectra side by side.
    #[serde(default)]
    pub linear_oracle: bool,
}

fn default_gap() -> f64 {
    10.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DynamicsKind {
    #[default]
    Joint,
    PerCoordinate,
    Separable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsConfig {
    pub grid: TimeGrid,
    /// One signal per input channel.
    pub signals: Vec<Signal>,
    pub kernel: KernelConfig,
    #[serde(default)]
    pub bias: bool,
    #[serde(default)]
    pub model: DynamicsKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputMapConfig {
    /// Defaults to the dynamics training grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<TimeGrid>,
    /// Defaults to the dynamics training signals.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signals: Option<Vec<Signal>>,
    pub kernel: KernelConfig,
    #[serde(default)]
    pub bias: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaGrid {
    Values(Vec<f64>),
    Log(LogSpacing),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogSpacing {
    pub log10_min: f64,
    pub log10_max: f64,
    pub count: usize,
}

impl LambdaGrid {
    pub fn values(&self) -> Vec<f64> {
        match self {
            LambdaGrid::Values(v) => v.clone(),
            LambdaGrid::Log(s) => log_grid(s.log10_min, s.log10_max, s.count),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Expansion {
    Keyword(ExpansionKeyword),
    Point(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpansionKeyword {
    /// The evaluation run's initial state.
    InitialState,
}

impl Default for Expansion {
    fn default() -> Self {
        Expansion::Keyword(ExpansionKeyword::InitialState)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum JacobianConfig {
    Taylor {
        #[serde(default)]
        expansion: Expansion,
        #[serde(default = "never")]
        refresh: Refresh,
    },
    KernelProperty,
}

fn never() -> Refresh {
    Refresh::Never
}

impl Default for JacobianConfig {
    fn default() -> Self {
        JacobianConfig::Taylor {
            expansion: Expansion::default(),
            refresh: Refresh::Never,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    pub grid: TimeGrid,
    pub signals: Vec<Signal>,
    /// Defaults to the origin.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<Vec<f64>>,
}

/// Replacement evaluation signals for `evaluate --input`: a list, or an object with `signals`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum EvaluationInput {
    List(Vec<Signal>),
    Object(SignalsOnly),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalsOnly {
    pub signals: Vec<Signal>,
}

impl EvaluationInput {
    pub fn into_signals(self) -> Vec<Signal> {
        match self {
            EvaluationInput::List(s) => s,
            EvaluationInput::Object(o) => o.signals,
        }
    }
}

/// Parses JSON, reporting the path of the offending key on failure.
pub fn parse_json<T: serde::de::DeserializeOwned>(text: &str, origin: &Path) -> Result<T, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        CliError::Config {
            field: if field == "." { origin.display().to_string() } else { field },
            message: e.into_inner().to_string(),
        }
    })
}

pub fn load(path: &Path) -> Result<PipelineConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::config(path.display().to_string(), e.to_string()))?;
    let cfg: PipelineConfig = parse_json(&text, path)?;
    cfg.validate()?;
    Ok(cfg)
}

/// 64-bit mix from SplitMix64, used to derive independent seeds from the run seed.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed actually used for a random source whose config seed is `local`.
pub fn derive_seed(run_seed: u64, local: u64) -> u64 {
    mix(run_seed ^ mix(local))
}

/// Rewrites every random signal's seed through [`derive_seed`].
pub fn seeded(signal: &Signal, run_seed: u64) -> Signal {
    match signal {
        Signal::UniformRandom { lo, hi, hold, seed } => Signal::UniformRandom {
            lo: *lo,
            hi: *hi,
            hold: *hold,
            seed: derive_seed(run_seed, *seed),
        },
        Signal::Sum { terms } => Signal::Sum {
            terms: terms.iter().map(|t| seeded(t, run_seed)).collect(),
        },
        Signal::Scaled { signal, factor } => Signal::Scaled {
            signal: Box::new(seeded(signal, run_seed)),
            factor: *factor,
        },
        other => other.clone(),
    }
}

fn rows_to_matrix(rows: &[Vec<f64>], field: &str, cols: Option<usize>) -> Result<DMatrix<f64>, CliError> {
    let width = cols.or_else(|| rows.first().map(Vec::len)).unwrap_or(0);
    if let Some((i, _)) = rows.iter().enumerate().find(|(_, r)| r.len() != width) {
        return Err(CliError::config(format!("{field}[{i}]"), format!("expected {width} entries")));
    }
    Ok(DMatrix::from_fn(rows.len(), width, |i, j| rows[i][j]))
}

impl SystemConfig {
    pub fn build(&self, run_seed: u64) -> Result<Box<dyn ControlSystem>, CliError> {
        let sys: Box<dyn ControlSystem> = match self {
            SystemConfig::Builtin { name } => builtin(name).map_err(|e| CliError::config("system.name", e.to_string()))?,
            SystemConfig::Polynomial(p) => {
                p.validate().map_err(|e| CliError::config("system", e.to_string()))?;
                Box::new(p.clone())
            }
            SystemConfig::Linear { a, b, c } => {
                let a = rows_to_matrix(a, "system.a", None)?;
                let n = a.nrows();
                let b = rows_to_matrix(b, "system.b", None)?;
                let c = rows_to_matrix(c, "system.c", Some(n))?;
                Box::new(LinearSystem::new(a, b, c).map_err(|e| CliError::config("system", e.to_string()))?)
            }
            SystemConfig::RandomLti {
                states,
                inputs,
                outputs,
                decay,
                seed,
            } => {
                if *states == 0 || *inputs == 0 || *outputs == 0 {
                    return Err(CliError::config("system", "dimensions must be positive"));
                }
                if !(*decay > 0.0 && decay.is_finite()) {
                    return Err(CliError::config("system.decay", "must be positive"));
                }
                let seed = seed.unwrap_or_else(|| derive_seed(run_seed, 0));
                Box::new(LinearSystem::random_stable(*states, *inputs, *outputs, *decay, seed))
            }
        };
        check_equilibrium(sys.as_ref()).map_err(|e| CliError::config("system", e.to_string()))?;
        Ok(sys)
    }

    /// The system as `(A, B, C)` when it is linear.
    pub fn linear(&self, run_seed: u64) -> Option<LinearSystem> {
        match self {
            SystemConfig::Linear { a, b, c } => {
                let a = rows_to_matrix(a, "system.a", None).ok()?;
                let n = a.nrows();
                LinearSystem::new(a, rows_to_matrix(b, "system.b", None).ok()?, rows_to_matrix(c, "system.c", Some(n)).ok()?).ok()
            }
            SystemConfig::RandomLti {
                states,
                inputs,
                outputs,
                decay,
                seed,
            } => Some(LinearSystem::random_stable(
                *states,
                *inputs,
                *outputs,
                *decay,
                seed.unwrap_or_else(|| derive_seed(run_seed, 0)),
            )),
            _ => None,
        }
    }
}

fn check_grid(grid: &TimeGrid, field: &str) -> Result<(), CliError> {
    grid.validate().map_err(|e| CliError::config(field, e.to_string()))
}

fn check_signals(signals: &[Signal], inputs: usize, field: &str) -> Result<(), CliError> {
    if signals.len() != inputs {
        return Err(CliError::config(field, format!("expected one signal per input ({inputs}), got {}", signals.len())));
    }
    for (i, s) in signals.iter().enumerate() {
        s.validate().map_err(|e| CliError::config(format!("{field}[{i}]"), e.to_string()))?;
    }
    Ok(())
}

impl PipelineConfig {
    /// Checks everything that can be checked before any simulation.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.spec_version != SPEC_VERSION {
            return Err(CliError::config(
                "spec_version",
                format!("unsupported version {} (this build reads {SPEC_VERSION})", self.spec_version),
            ));
        }
        let sys = self.system.build(self.seed)?;
        let (n, m) = (sys.state_dim(), sys.input_dim());
        check_grid(&self.gramians, "gramians")?;
        self.tolerances.validate().map_err(|e| CliError::config("tolerances", e.to_string()))?;

        self.balancing.kernel.validate("balancing.kernel")?;
        match self.balancing.order {
            OrderChoice::Fixed(0) => return Err(CliError::config("balancing.order", "must be at least 1")),
            OrderChoice::Fixed(q) if q > self.gramians.samples * m.max(1) => {
                return Err(CliError::config(
                    "balancing.order",
                    format!("{q} exceeds the number of controllability samples"),
                ))
            }
            _ => {}
        }
        if self.balancing.gap_threshold.is_nan() || self.balancing.gap_threshold <= 1.0 {
            return Err(CliError::config("balancing.gap_threshold", "must exceed 1"));
        }

        check_grid(&self.dynamics.grid, "dynamics.grid")?;
        check_signals(&self.dynamics.signals, m, "dynamics.signals")?;
        self.dynamics.kernel.validate("dynamics.kernel")?;
        if self.dynamics.model == DynamicsKind::Separable && m == 0 {
            return Err(CliError::config("dynamics.model", "separable models need at least one input"));
        }

        if let Some(g) = &self.output_map.grid {
            check_grid(g, "output_map.grid")?;
        }
        if let Some(s) = &self.output_map.signals {
            check_signals(s, m, "output_map.signals")?;
        }
        self.output_map.kernel.validate("output_map.kernel")?;

        let lambdas = self.lambda_grid.values();
        if lambdas.is_empty() {
            return Err(CliError::config("lambda_grid", "is empty"));
        }
        if let Some(bad) = lambdas.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(CliError::config("lambda_grid", format!("{bad} is not a positive finite value")));
        }

        check_grid(&self.evaluation.grid, "evaluation.grid")?;
        check_signals(&self.evaluation.signals, m, "evaluation.signals")?;
        if let Some(x0) = &self.evaluation.initial_state {
            if x0.len() != n || x0.iter().any(|v| !v.is_finite()) {
                return Err(CliError::config("evaluation.initial_state", format!("expected {n} finite values")));
            }
        }

        match &self.jacobian {
            JacobianConfig::Taylor { expansion, refresh } => {
                if let Expansion::Point(p) = expansion {
                    if p.len() != n || p.iter().any(|v| !v.is_finite()) {
                        return Err(CliError::config("jacobian.expansion", format!("expected {n} finite values")));
                    }
                }
                if *refresh == Refresh::EveryKSteps(0) {
                    return Err(CliError::config("jacobian.refresh", "interval must be at least 1 step"));
                }
            }
            JacobianConfig::KernelProperty => {
                if self.balancing.kernel.family == KernelFamily::Gaussian {
                    return Err(CliError::config(
                        "jacobian.mode",
                        "kernel_property needs a polynomial or linear balancing kernel",
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn run_seed(&self) -> u64 {
        self.seed
    }

    pub fn initial_state(&self, n: usize) -> Vec<f64> {
        self.evaluation.initial_state.clone().unwrap_or_else(|| vec![0.0; n])
    }

    pub fn output_grid(&self) -> TimeGrid {
        self.output_map.grid.unwrap_or(self.dynamics.grid)
    }

    pub fn output_signals(&self) -> &[Signal] {
        self.output_map.signals.as_deref().unwrap_or(&self.dynamics.signals)
    }

    /// Pretty JSON of the effective configuration, with a trailing newline.
    pub fn to_pretty_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paper() -> PipelineConfig {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/paper_7d.json");
        load(&path).unwrap()
    }

    fn with(f: impl FnOnce(&mut serde_json::Value)) -> Result<PipelineConfig, CliError> {
        let mut v = serde_json::to_value(paper()).unwrap();
        f(&mut v);
        let cfg: PipelineConfig = parse_json(&v.to_string(), Path::new("test"))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn field_of(r: Result<PipelineConfig, CliError>) -> String {
        match r {
            Err(CliError::Config { field, .. }) => field,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn bundled_config_round_trips() {
        let cfg = paper();
        let back: PipelineConfig = parse_json(&cfg.to_pretty_json(), Path::new("x")).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected_with_their_path() {
        let f = field_of(with(|v| v["balancing"]["kernel"]["colour"] = 1.into()));
        assert!(f.starts_with("balancing.kernel"), "{f}");
        let f = field_of(with(|v| v["surprise"] = true.into()));
        assert_eq!(f, "surprise");
        let f = field_of(with(|v| v["dynamics"]["signals"][0]["speed"] = 3.into()));
        assert!(f.starts_with("dynamics.signals"), "{f}");
    }

    #[test]
    fn invalid_values_name_their_field() {
        assert_eq!(field_of(with(|v| v["balancing"]["order"] = 0.into())), "balancing.order");
        assert_eq!(field_of(with(|v| v["spec_version"] = 7.into())), "spec_version");
        assert_eq!(field_of(with(|v| v["evaluation"]["signals"] = serde_json::json!([]))), "evaluation.signals");
        assert_eq!(
            field_of(with(|v| v["output_map"]["kernel"]["degree"] = 2.into())),
            "output_map.kernel.degree"
        );
        assert_eq!(field_of(with(|v| v["lambda_grid"] = serde_json::json!([1.0, -1.0]))), "lambda_grid");
        assert_eq!(
            field_of(with(|v| v["system"] = serde_json::json!({"kind": "builtin", "name": "nope"}))),
            "system.name"
        );
    }

    #[test]
    fn order_accepts_auto_gap_keyword() {
        let cfg = with(|v| v["balancing"]["order"] = "auto-gap".into()).unwrap();
        assert_eq!(cfg.balancing.order, OrderChoice::Keyword(OrderKeyword::AutoGap));
        assert!(with(|v| v["balancing"]["order"] = "auto".into()).is_err());
    }

    #[test]
    fn gamma_accepts_auto_or_number() {
        let cfg = with(|v| v["output_map"]["kernel"]["gamma"] = 2.5.into()).unwrap();
        let k = cfg.output_map.kernel.resolve(|| unreachable!()).unwrap();
        assert_eq!(k, KernelSpec::Gaussian { gamma: 2.5 });
        assert!(paper().output_map.kernel.is_auto());
    }

    #[test]
    fn derived_seeds_depend_on_both_parts() {
        assert_ne!(derive_seed(0, 1), derive_seed(1, 1));
        assert_ne!(derive_seed(0, 1), derive_seed(0, 2));
        assert_eq!(derive_seed(5, 9), derive_seed(5, 9));
        let s = Signal::Sum {
            terms: vec![Signal::UniformRandom { lo: 0.0, hi: 1.0, hold: 0.1, seed: 3 }, Signal::Zero],
        };
        match seeded(&s, 4) {
            Signal::Sum { terms } => assert_eq!(
                terms[0],
                Signal::UniformRandom { lo: 0.0, hi: 1.0, hold: 0.1, seed: derive_seed(4, 3) }
            ),
            _ => unreachable!(),
        }
    }

    #[test]
    fn random_lti_is_linear() {
        let cfg = with(|v| {
            v["system"] = serde_json::json!({"kind": "random_lti", "states": 3, "inputs": 1, "outputs": 1, "decay": 0.5});
            v["jacobian"] = serde_json::json!({"mode": "taylor"});
            v["evaluation"]["initial_state"] = serde_json::Value::Null;
        });
        let cfg = cfg.unwrap();
        assert_eq!(cfg.system.linear(cfg.seed).unwrap().a.nrows(), 3);
    }
}
