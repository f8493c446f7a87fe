//! Stage runner: each stage reads the artifacts of earlier stages from the output directory
//! and is skipped while its own artifacts are newer than everything it reads.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use kernel_mor_core::balancing::{auto_gap_order, gap_ratios, kernel_balance, truncate, BalancedReduction};
use kernel_mor_core::gramians::{empirical_gramians, format_float, linear_balance, GramianDataset};
use kernel_mor_core::kernels::gamma_heuristic;
use kernel_mor_core::reduced::{
    compare, dynamics_dataset, output_dataset, separable_datasets, ComparisonMetrics, JacobianMode, ReducedSystem,
};
use kernel_mor_core::rkhs::{rls_fit, select_lambda, RegressionDataset, RkhsModel};
use kernel_mor_core::systems::integrate;
use kernel_mor_core::{ControlSystem, Signal, TimeGrid, Trajectory};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::artifacts::{
    numbered, read_json, read_trajectory, write_bytes, write_json, write_table, write_text, write_trajectory,
    DynamicsBundle, JacobianRecord, ModelBundle, OrderSource, ReducedSystemBundle, ReductionBundle,
};
use crate::config::{self, DynamicsKind, EvaluationInput, Expansion, JacobianConfig, KernelConfig, OrderChoice, PipelineConfig};
use crate::error::{CliError, StageContext};
use crate::plot::{line_chart, log_spectrum, Series};

pub const CONFIG_FILE: &str = "config.json";
pub const MANIFEST_FILE: &str = "MANIFEST";

pub const GRAMIAN_DATASET: &str = "gramian_dataset.csv";
pub const HANKEL_VALUES: &str = "hankel_values.csv";
pub const REDUCTION: &str = "reduction.json";
pub const HANKEL_PLOT: &str = "hankel_spectrum.svg";
pub const LINEAR_ORACLE: &str = "linear_oracle.csv";
pub const TRAJ_DYNAMICS: &str = "trajectory_dynamics.csv";
pub const TRAJ_OUTPUT: &str = "trajectory_output.csv";
pub const TRAJ_EVALUATION: &str = "trajectory_evaluation.csv";
pub const DYNAMICS_MODEL: &str = "dynamics_model.json";
pub const OUTPUT_MODEL: &str = "output_model.json";
pub const LOOCV_DYNAMICS: &str = "loocv_dynamics.csv";
pub const LOOCV_OUTPUT: &str = "loocv_output.csv";
pub const REDUCED_SYSTEM: &str = "reduced_system.json";
pub const COMPARISON: &str = "comparison.csv";
pub const METRICS: &str = "metrics.json";
pub const COMPARISON_PLOT: &str = "comparison.svg";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Gramians,
    Balance,
    Simulate,
    Learn,
    Reduce,
    Evaluate,
}

impl Stage {
    /// Execution order of a full run.
    pub const ALL: [Stage; 6] = [
        Stage::Gramians,
        Stage::Balance,
        Stage::Simulate,
        Stage::Learn,
        Stage::Reduce,
        Stage::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Gramians => "gramians",
            Stage::Balance => "balance",
            Stage::Simulate => "simulate",
            Stage::Learn => "learn",
            Stage::Reduce => "reduce",
            Stage::Evaluate => "evaluate",
        }
    }

    /// Upstream artifacts read by the stage (besides the effective config).
    pub fn inputs(self) -> &'static [&'static str] {
        match self {
            Stage::Gramians | Stage::Simulate => &[],
            Stage::Balance => &[GRAMIAN_DATASET],
            Stage::Learn => &[REDUCTION, TRAJ_DYNAMICS, TRAJ_OUTPUT],
            Stage::Reduce => &[REDUCTION, DYNAMICS_MODEL, OUTPUT_MODEL],
            Stage::Evaluate => &[REDUCTION, DYNAMICS_MODEL, OUTPUT_MODEL, REDUCED_SYSTEM, TRAJ_EVALUATION],
        }
    }

    fn base_outputs(self) -> &'static [&'static str] {
        match self {
            Stage::Gramians => &[GRAMIAN_DATASET],
            Stage::Balance => &[HANKEL_VALUES, REDUCTION, HANKEL_PLOT],
            Stage::Simulate => &[TRAJ_DYNAMICS, TRAJ_OUTPUT, TRAJ_EVALUATION],
            Stage::Learn => &[DYNAMICS_MODEL, OUTPUT_MODEL, LOOCV_DYNAMICS, LOOCV_OUTPUT],
            Stage::Reduce => &[REDUCED_SYSTEM],
            Stage::Evaluate => &[COMPARISON, METRICS, COMPARISON_PLOT],
        }
    }

    fn producing(file: &str) -> Stage {
        Stage::ALL
            .into_iter()
            .find(|s| s.base_outputs().contains(&file))
            .expect("every stage input is produced by some stage")
    }
}

#[derive(Debug, Clone, Default)]
pub struct Options {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    /// Re-run stages even when their artifacts are up to date.
    pub force: bool,
    /// Suppress progress output.
    pub quiet: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ran,
    Cached,
}

/// Output-error summary written to `metrics.json`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metrics {
    pub relative_l2: f64,
    pub rmse: f64,
    pub max_abs_err: f64,
    pub reduced_order: usize,
    pub samples: usize,
}

pub struct Pipeline {
    pub cfg: PipelineConfig,
    pub out: PathBuf,
    sys: Box<dyn ControlSystem>,
    opts: Options,
    states: BTreeMap<Stage, String>,
}

fn mtime(path: &Path) -> Option<SystemTime> {
    fs::metadata(path).and_then(|m| m.modified()).ok()
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

impl Pipeline {
    /// Loads and validates the config, creates the output directory and records the effective
    /// config there (rewritten only when its content changes, so its timestamp tracks edits).
    pub fn open(config_path: &Path, opts: Options) -> Result<Self, CliError> {
        let mut cfg = config::load(config_path)?;
        if let Some(seed) = opts.seed {
            cfg.seed = seed;
        }
        let out = opts
            .out
            .clone()
            .or_else(|| cfg.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from("out"));
        cfg.out_dir = None;
        cfg.validate()?;
        let sys = cfg.system.build(cfg.seed)?;
        fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
        let effective = cfg.to_pretty_json();
        let cfg_path = out.join(CONFIG_FILE);
        if fs::read_to_string(&cfg_path).ok().as_deref() != Some(effective.as_str()) {
            write_bytes(&cfg_path, effective.as_bytes())?;
        }
        Ok(Self {
            cfg,
            out,
            sys,
            opts,
            states: BTreeMap::new(),
        })
    }

    pub fn system(&self) -> &dyn ControlSystem {
        self.sys.as_ref()
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn say(&self, msg: impl AsRef<str>) {
        if !self.opts.quiet {
            println!("{}", msg.as_ref());
        }
    }

    pub fn outputs(&self, stage: Stage) -> Vec<&'static str> {
        let mut v = stage.base_outputs().to_vec();
        if stage == Stage::Balance && self.cfg.balancing.linear_oracle {
            v.push(LINEAR_ORACLE);
        }
        v
    }

    fn input_paths(&self, stage: Stage) -> Vec<PathBuf> {
        std::iter::once(CONFIG_FILE)
            .chain(stage.inputs().iter().copied())
            .map(|f| self.path(f))
            .collect()
    }

    fn newest_input(&self, stage: Stage) -> Option<(SystemTime, PathBuf)> {
        let mut newest: Option<(SystemTime, PathBuf)> = None;
        for p in self.input_paths(stage) {
            let t = mtime(&p)?;
            if newest.as_ref().is_none_or(|(n, _)| t > *n) {
                newest = Some((t, p));
            }
        }
        newest
    }

    /// All outputs exist and none is older than any input.
    pub fn is_fresh(&self, stage: Stage) -> bool {
        let Some((newest, _)) = self.newest_input(stage) else {
            return false;
        };
        self.outputs(stage)
            .iter()
            .all(|f| mtime(&self.path(f)).is_some_and(|t| t >= newest))
    }

    fn require(&self, files: &[&str]) -> Result<(), CliError> {
        for f in files {
            let path = self.path(f);
            let producer = Stage::producing(f);
            if !path.exists() {
                return Err(CliError::MissingArtifact {
                    path,
                    producer: producer.name(),
                });
            }
            if !self.is_fresh(producer) {
                let newer = self.newest_input(producer).map(|(_, p)| p).unwrap_or_else(|| self.path(CONFIG_FILE));
                return Err(CliError::StaleArtifact {
                    path,
                    newer,
                    producer: producer.name(),
                });
            }
        }
        Ok(())
    }

    /// Runs one stage unless its artifacts are current, recording the result in the MANIFEST.
    pub fn run_stage(&mut self, stage: Stage) -> Result<Outcome, CliError> {
        self.require(stage.inputs())?;
        if !self.opts.force && self.is_fresh(stage) {
            self.say(format!("{}: up to date", stage.name()));
            self.states.insert(stage, "complete".into());
            self.write_manifest()?;
            return Ok(Outcome::Cached);
        }
        self.states.insert(stage, "running".into());
        let result = match stage {
            Stage::Gramians => self.gramians_stage(),
            Stage::Balance => self.balance_stage(),
            Stage::Simulate => self.simulate_stage(),
            Stage::Learn => self.learn_stage(),
            Stage::Reduce => self.reduce_stage(),
            Stage::Evaluate => self.evaluate_stage(),
        };
        let state = match &result {
            Ok(()) => "complete".to_string(),
            Err(e) => format!("failed: {}", one_line(&e.to_string())),
        };
        self.states.insert(stage, state);
        self.write_manifest()?;
        result.map(|()| Outcome::Ran)
    }

    /// Every stage in order; stops at the first failure.
    pub fn run_all(&mut self) -> Result<(), CliError> {
        for stage in Stage::ALL {
            self.run_stage(stage)?;
        }
        Ok(())
    }

    fn previous_states(&self) -> BTreeMap<String, String> {
        let text = fs::read_to_string(self.path(MANIFEST_FILE)).unwrap_or_default();
        text.lines()
            .filter_map(|l| l.strip_prefix("stage "))
            .filter_map(|l| l.split_once(": "))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    fn write_manifest(&self) -> Result<(), CliError> {
        let previous = self.previous_states();
        let now = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let mut text = format!("kernel-mor manifest\nwritten_unix_time: {now}\n");
        for stage in Stage::ALL {
            let state = match self.states.get(&stage) {
                Some(s) => s.clone(),
                None if self.is_fresh(stage) => "complete".into(),
                None => match previous.get(stage.name()) {
                    Some(p) if p.starts_with("failed") => p.clone(),
                    _ => "pending".into(),
                },
            };
            text.push_str(&format!("stage {}: {state}\n", stage.name()));
            for f in self.outputs(stage) {
                if self.path(f).exists() {
                    text.push_str(&format!("  {f}\n"));
                }
            }
        }
        write_text(&self.path(MANIFEST_FILE), &text)
    }

    // ----- gramians -----

    fn gramians_stage(&self) -> Result<(), CliError> {
        let ds = GramianDataset::collect(self.system(), &self.cfg.gramians).stage("gramians")?;
        self.write_dataset(&ds, &self.path(GRAMIAN_DATASET))?;
        self.say(format!(
            "gramians: {} controllability and {} observability samples",
            ds.ctrl_samples.ncols(),
            ds.obs_samples.ncols()
        ));
        Ok(())
    }

    fn write_dataset(&self, ds: &GramianDataset, path: &Path) -> Result<(), CliError> {
        let file = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
        ds.write_csv(std::io::BufWriter::new(file))
            .map_err(|e| CliError::artifact(path, e))
    }

    /// Reads a dataset CSV and checks it against the configured grid and system.
    pub fn read_dataset(&self, path: &Path) -> Result<GramianDataset, CliError> {
        let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
        let ds = GramianDataset::read_csv(std::io::BufReader::new(file), &self.cfg.gramians)
            .map_err(|e| CliError::artifact(path, e))?;
        let sys = self.system();
        if ds.state_dim() != sys.state_dim() || ds.inputs != sys.input_dim() || ds.outputs != sys.output_dim() {
            return Err(CliError::artifact(
                path,
                format!(
                    "dataset is for {} states, {} inputs, {} outputs; the configured system has {}, {}, {}",
                    ds.state_dim(),
                    ds.inputs,
                    ds.outputs,
                    sys.state_dim(),
                    sys.input_dim(),
                    sys.output_dim()
                ),
            ));
        }
        Ok(ds)
    }

    /// Replaces the dataset with an external CSV (collected on the configured grid).
    pub fn import_dataset(&mut self, source: &Path) -> Result<(), CliError> {
        let ds = self.read_dataset(source)?;
        self.write_dataset(&ds, &self.path(GRAMIAN_DATASET))?;
        self.states.insert(Stage::Gramians, "complete".into());
        self.write_manifest()?;
        self.say(format!("gramians: imported {}", source.display()));
        Ok(())
    }

    pub fn export_dataset(&self, target: &Path) -> Result<(), CliError> {
        self.require(&[GRAMIAN_DATASET])?;
        let ds = self.read_dataset(&self.path(GRAMIAN_DATASET))?;
        self.write_dataset(&ds, target)?;
        self.say(format!("gramians: exported to {}", target.display()));
        Ok(())
    }

    // ----- balance -----

    fn balance_stage(&self) -> Result<(), CliError> {
        let ds = self.read_dataset(&self.path(GRAMIAN_DATASET))?;
        let tol = self.cfg.tolerances;
        let kernel = self
            .cfg
            .balancing
            .kernel
            .resolve(|| gamma_heuristic(&ds.ctrl_samples))
            .stage("balance")?;
        let kb = kernel_balance(&ds, &kernel, &tol).stage("balance")?;
        let rank = kb.hankel.len();
        let (order, source) = match self.cfg.balancing.order {
            OrderChoice::Fixed(q) if q > rank => {
                return Err(CliError::config(
                    "balancing.order",
                    format!("q = {q} exceeds the numerical rank {rank} of the balanced realization"),
                ))
            }
            OrderChoice::Fixed(q) => (q, OrderSource::Fixed),
            OrderChoice::Keyword(_) => (auto_gap_order(&kb.hankel, self.cfg.balancing.gap_threshold), OrderSource::AutoGap),
        };
        let br = truncate(&kb, order).stage("balance")?;

        let hankel: Vec<f64> = kb.hankel.iter().copied().collect();
        let ratios = gap_ratios(&kb.hankel);
        write_table(
            &self.path(HANKEL_VALUES),
            &["k".into(), "sigma".into(), "gap_ratio".into()],
            hankel.iter().enumerate().map(|(k, s)| {
                vec![
                    (k + 1).to_string(),
                    format_float(*s),
                    ratios.get(k).map(|r| format_float(*r)).unwrap_or_default(),
                ]
            }),
        )?;
        write_json(&self.path(REDUCTION), &ReductionBundle::new(&br, source))?;

        let mut spectra: Vec<(&str, &[f64])> = vec![("kernel balancing", &hankel)];
        let moore: Vec<f64>;
        if self.cfg.balancing.linear_oracle {
            let lb = linear_balance(&empirical_gramians(&ds).stage("balance")?, &tol).stage("balance")?;
            moore = lb.hankel.iter().copied().collect();
            let rows = moore.len().max(hankel.len());
            write_table(
                &self.path(LINEAR_ORACLE),
                &["k".into(), "kernel".into(), "moore".into(), "relative_difference".into()],
                (0..rows).map(|k| {
                    let (a, b) = (hankel.get(k), moore.get(k));
                    vec![
                        (k + 1).to_string(),
                        a.map(|v| format_float(*v)).unwrap_or_default(),
                        b.map(|v| format_float(*v)).unwrap_or_default(),
                        match (a, b) {
                            (Some(a), Some(b)) => format_float((a - b).abs() / b.abs()),
                            _ => String::new(),
                        },
                    ]
                }),
            )?;
            spectra.push(("Moore (linear empirical Gramians)", &moore));
        }
        write_text(&self.path(HANKEL_PLOT), &log_spectrum("Hankel values", &spectra))?;
        Ok(())
    }

    pub fn load_reduction(&self) -> Result<(ReductionBundle, BalancedReduction), CliError> {
        let path = self.path(REDUCTION);
        let bundle: ReductionBundle = read_json(&path)?;
        let br = bundle.to_reduction(&path)?;
        if br.state_dim() != self.system().state_dim() {
            return Err(CliError::artifact(&path, "state dimension differs from the configured system"));
        }
        Ok((bundle, br))
    }

    /// The Hankel values with gap ratios and the chosen order, as printed by `balance`.
    pub fn sigma_table(&self) -> Result<String, CliError> {
        let (bundle, _) = self.load_reduction()?;
        let h = DVector::from_vec(bundle.hankel.clone());
        let ratios = gap_ratios(&h);
        let mut s = format!("{:>4}  {:>24}  {:>12}\n", "k", "sigma_k", "s_k/s_k+1");
        for (k, v) in bundle.hankel.iter().enumerate() {
            let r = ratios.get(k).map(|r| format!("{r:.4}")).unwrap_or_default();
            let mark = if k + 1 == bundle.order { "  <- q" } else { "" };
            s.push_str(&format!("{:>4}  {:>24}  {:>12}{mark}\n", k + 1, format_float(*v), r));
        }
        if bundle.hankel.len() >= 3 {
            s.push_str(&format!("sigma_1/sigma_3 = {:.4}\n", bundle.hankel[0] / bundle.hankel[2]));
        }
        let how = match bundle.order_source {
            OrderSource::Fixed => "fixed",
            OrderSource::AutoGap => "auto-gap",
        };
        s.push_str(&format!("reduced order q = {} ({how}), numerical rank {}\n", bundle.order, bundle.hankel.len()));
        Ok(s)
    }

    // ----- simulate -----

    fn seeded(&self, signals: &[Signal]) -> Vec<Signal> {
        signals.iter().map(|s| config::seeded(s, self.cfg.seed)).collect()
    }

    fn simulate(&self, x0: &[f64], signals: &[Signal], grid: &TimeGrid, what: &str) -> Result<Trajectory, CliError> {
        integrate(self.system(), &DVector::from_column_slice(x0), &self.seeded(signals), grid)
            .map_err(|e| e.in_run(what.to_string()))
            .stage("simulate")
    }

    fn simulate_stage(&self) -> Result<(), CliError> {
        let n = self.system().state_dim();
        let rest = vec![0.0; n];
        let c = &self.cfg;
        let dynamics = self.simulate(&rest, &c.dynamics.signals, &c.dynamics.grid, "dynamics training run")?;
        write_trajectory(&self.path(TRAJ_DYNAMICS), &dynamics)?;
        let output = self.simulate(&rest, c.output_signals(), &c.output_grid(), "output training run")?;
        write_trajectory(&self.path(TRAJ_OUTPUT), &output)?;
        let eval = self.simulate(&c.initial_state(n), &c.evaluation.signals, &c.evaluation.grid, "evaluation run")?;
        write_trajectory(&self.path(TRAJ_EVALUATION), &eval)?;
        self.say(format!(
            "simulate: {} + {} training samples, {} evaluation samples",
            dynamics.times.len(),
            output.times.len(),
            eval.times.len()
        ));
        Ok(())
    }

    fn read_run(&self, name: &str, grid: &TimeGrid) -> Result<Trajectory, CliError> {
        let path = self.path(name);
        let traj = read_trajectory(&path, grid)?;
        let sys = self.system();
        if traj.states.nrows() != sys.state_dim() || traj.inputs.nrows() != sys.input_dim() || traj.outputs.nrows() != sys.output_dim() {
            return Err(CliError::artifact(&path, "columns do not match the configured system"));
        }
        Ok(traj)
    }

    // ----- learn -----

    fn fit(&self, ds: &RegressionDataset, kernel: &KernelConfig, label: &str) -> Result<ModelBundle, CliError> {
        let kernel = kernel.resolve(|| gamma_heuristic(&ds.inputs)).stage("learn")?;
        let sel = select_lambda(ds, &kernel, &self.cfg.lambda_grid.values()).stage("learn")?;
        let model: RkhsModel = rls_fit(ds, &kernel, sel.best).stage("learn")?;
        let best_err = sel.curve.iter().find(|(l, _)| *l == sel.best).map(|c| c.1).unwrap_or(f64::NAN);
        self.say(format!("learn: {label}: {kernel:?}, lambda = {:e} (LOOCV {best_err:.4e})", sel.best));
        Ok(ModelBundle::new(&model, sel.curve))
    }

    fn learn_stage(&self) -> Result<(), CliError> {
        let (_, br) = self.load_reduction()?;
        let c = &self.cfg;
        let sys = self.system();
        let traj = self.read_run(TRAJ_DYNAMICS, &c.dynamics.grid)?;
        let kernel = &c.dynamics.kernel;
        let dynamics = match c.dynamics.model {
            DynamicsKind::Joint => {
                let ds = dynamics_dataset(sys, &br, &traj, c.dynamics.bias).stage("learn")?;
                DynamicsBundle::Joint { model: self.fit(&ds, kernel, "f")? }
            }
            DynamicsKind::PerCoordinate => {
                let ds = dynamics_dataset(sys, &br, &traj, c.dynamics.bias).stage("learn")?;
                let models = (0..sys.state_dim())
                    .map(|i| self.fit(&ds.select_targets(&[i]), kernel, &format!("f{}", i + 1)))
                    .collect::<Result<_, _>>()?;
                DynamicsBundle::PerCoordinate { models }
            }
            DynamicsKind::Separable => {
                let (drift, gains) = separable_datasets(sys, &br, &traj, c.dynamics.bias).stage("learn")?;
                DynamicsBundle::Separable {
                    drift: self.fit(&drift, kernel, "drift")?,
                    input_gains: gains
                        .iter()
                        .enumerate()
                        .map(|(i, ds)| self.fit(ds, kernel, &format!("g{}", i + 1)))
                        .collect::<Result<_, _>>()?,
                }
            }
        };
        let out_traj = self.read_run(TRAJ_OUTPUT, &c.output_grid())?;
        let ds = output_dataset(&br, &out_traj, c.output_map.bias).stage("learn")?;
        let output = self.fit(&ds, &c.output_map.kernel, "h")?;

        write_json(&self.path(DYNAMICS_MODEL), &dynamics)?;
        write_json(&self.path(OUTPUT_MODEL), &output)?;
        self.write_loocv(LOOCV_DYNAMICS, &dynamics.labelled())?;
        self.write_loocv(LOOCV_OUTPUT, &[("h".to_string(), &output)])
    }

    fn write_loocv(&self, name: &str, models: &[(String, &ModelBundle)]) -> Result<(), CliError> {
        let header = ["model", "lambda", "loocv_error", "selected"].map(String::from);
        let rows = models.iter().flat_map(|(label, m)| {
            m.loocv.iter().map(move |(l, e)| {
                vec![
                    label.clone(),
                    format_float(*l),
                    format_float(*e),
                    u8::from(*l == m.lambda).to_string(),
                ]
            })
        });
        write_table(&self.path(name), &header, rows)
    }

    // ----- reduce -----

    fn jacobian_mode(&self) -> JacobianMode {
        let n = self.system().state_dim();
        match &self.cfg.jacobian {
            JacobianConfig::Taylor { expansion, refresh } => JacobianMode::Taylor {
                expansion: DVector::from_vec(match expansion {
                    Expansion::Keyword(_) => self.cfg.initial_state(n),
                    Expansion::Point(p) => p.clone(),
                }),
                refresh: *refresh,
            },
            JacobianConfig::KernelProperty => JacobianMode::KernelProperty,
        }
    }

    fn load_models(&self) -> Result<(kernel_mor_core::reduced::DynamicsModel, RkhsModel), CliError> {
        let dpath = self.path(DYNAMICS_MODEL);
        let opath = self.path(OUTPUT_MODEL);
        let dynamics = read_json::<DynamicsBundle>(&dpath)?.to_model(&dpath)?;
        let output = read_json::<ModelBundle>(&opath)?.to_model(&opath)?;
        Ok((dynamics, output))
    }

    fn reduce_stage(&self) -> Result<(), CliError> {
        let (_, br) = self.load_reduction()?;
        let (dynamics, output) = self.load_models()?;
        let mode = self.jacobian_mode();
        let x0 = self.cfg.initial_state(br.state_dim());
        let xr0 = br.reduce(&x0).stage("reduce")?;
        let jacobian = match &mode {
            JacobianMode::Taylor { expansion, refresh } => JacobianRecord::Taylor {
                expansion: expansion.iter().copied().collect(),
                refresh: *refresh,
            },
            JacobianMode::KernelProperty => JacobianRecord::KernelProperty,
        };
        let order = br.order();
        ReducedSystem::new(br, dynamics, output, mode, self.cfg.tolerances).stage("reduce")?;
        write_json(
            &self.path(REDUCED_SYSTEM),
            &ReducedSystemBundle {
                order,
                jacobian,
                initial_state: x0,
                reduced_initial_state: xr0.iter().copied().collect(),
            },
        )?;
        self.say(format!("reduce: order {order}, x_r(0) = {:?}", xr0.as_slice()));
        Ok(())
    }

    /// The closed reduced system and its initial state, from the on-disk artifacts.
    pub fn load_reduced_system(&self) -> Result<(ReducedSystem, DVector<f64>), CliError> {
        let (_, br) = self.load_reduction()?;
        let (dynamics, output) = self.load_models()?;
        let path = self.path(REDUCED_SYSTEM);
        let bundle: ReducedSystemBundle = read_json(&path)?;
        let mode = match bundle.jacobian {
            JacobianRecord::Taylor { expansion, refresh } => JacobianMode::Taylor {
                expansion: DVector::from_vec(expansion),
                refresh,
            },
            JacobianRecord::KernelProperty => JacobianMode::KernelProperty,
        };
        let rs = ReducedSystem::new(br, dynamics, output, mode, self.cfg.tolerances).stage("evaluate")?;
        if bundle.reduced_initial_state.len() != rs.order() {
            return Err(CliError::artifact(&path, "reduced initial state has the wrong length"));
        }
        Ok((rs, DVector::from_vec(bundle.reduced_initial_state)))
    }

    // ----- evaluate -----

    fn evaluate_stage(&self) -> Result<(), CliError> {
        let reference = self.read_run(TRAJ_EVALUATION, &self.cfg.evaluation.grid)?;
        let signals = self.seeded(&self.cfg.evaluation.signals);
        let m = self.compare_against(&reference, &signals, &self.out)?;
        self.say(format!(
            "evaluate: relative L2 = {:.6}, RMSE = {:.6e}, max |error| = {:.6e}",
            m.relative_l2, m.rmse, m.max_abs_err
        ));
        Ok(())
    }

    fn compare_against(&self, reference: &Trajectory, signals: &[Signal], dir: &Path) -> Result<Metrics, CliError> {
        let (rs, xr0) = self.load_reduced_system()?;
        let grid = self.cfg.evaluation.grid;
        let reduced = rs.simulate(&xr0, signals, &grid).stage("evaluate")?;
        let ComparisonMetrics {
            rmse,
            relative_l2,
            max_abs_err,
        } = compare(&reference.outputs, &reduced.outputs).stage("evaluate")?;
        let metrics = Metrics {
            relative_l2,
            rmse,
            max_abs_err,
            reduced_order: rs.order(),
            samples: grid.samples,
        };

        let (m, p) = (reference.inputs.nrows(), reference.outputs.nrows());
        let header: Vec<String> = std::iter::once("t".to_string())
            .chain(numbered("u", m))
            .chain(numbered("y", p))
            .chain((1..=p).map(|k| format!("y{k}_hat")))
            .collect();
        let rows = (0..reference.times.len()).map(|j| {
            std::iter::once(reference.times[j])
                .chain(reference.inputs.column(j).iter().copied())
                .chain(reference.outputs.column(j).iter().copied())
                .chain(reduced.outputs.column(j).iter().copied())
                .map(format_float)
                .collect()
        });
        write_table(&dir.join(COMPARISON), &header, rows)?;
        write_json(&dir.join(METRICS), &metrics)?;

        let ys: Vec<Vec<f64>> = (0..p).map(|k| reference.outputs.row(k).iter().copied().collect()).collect();
        let yh: Vec<Vec<f64>> = (0..p).map(|k| reduced.outputs.row(k).iter().copied().collect()).collect();
        let names: Vec<(String, String)> = (1..=p).map(|k| (format!("y{k} full"), format!("y{k} reduced"))).collect();
        let mut series = Vec::new();
        for k in 0..p {
            series.push(Series { name: &names[k].0, x: &reference.times, y: &ys[k], dashed: false });
            series.push(Series { name: &names[k].1, x: &reference.times, y: &yh[k], dashed: true });
        }
        let title = format!("Output of the full and order-{} reduced system", rs.order());
        write_text(&dir.join(COMPARISON_PLOT), &line_chart(&title, "time [s]", "output", &series))?;
        Ok(metrics)
    }

    /// Evaluates on the signals in `input` instead of the configured ones; results go to
    /// `<out>/custom_<stem>/` and no other artifact is touched.
    pub fn evaluate_custom(&self, input: &Path) -> Result<(PathBuf, Metrics), CliError> {
        self.require(&[REDUCTION, DYNAMICS_MODEL, OUTPUT_MODEL, REDUCED_SYSTEM])?;
        let text = fs::read_to_string(input).map_err(|e| CliError::config(input.display().to_string(), e.to_string()))?;
        let signals = config::parse_json::<EvaluationInput>(&text, input)?.into_signals();
        let m = self.system().input_dim();
        if signals.len() != m {
            return Err(CliError::config(
                input.display().to_string(),
                format!("expected one signal per input ({m}), got {}", signals.len()),
            ));
        }
        for (i, s) in signals.iter().enumerate() {
            s.validate().map_err(|e| CliError::config(format!("{}[{i}]", input.display()), e.to_string()))?;
        }
        let stem = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "input".into());
        let dir = self.out.join(format!("custom_{stem}"));
        fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        let c = &self.cfg;
        let x0 = c.initial_state(self.system().state_dim());
        let reference = self.simulate(&x0, &signals, &c.evaluation.grid, "custom evaluation run")?;
        write_trajectory(&dir.join(TRAJ_EVALUATION), &reference)?;
        let metrics = self.compare_against(&reference, &self.seeded(&signals), &dir)?;
        self.say(format!(
            "evaluate ({}): relative L2 = {:.6}, RMSE = {:.6e}",
            input.display(),
            metrics.relative_l2,
            metrics.rmse
        ));
        Ok((dir, metrics))
    }
}
