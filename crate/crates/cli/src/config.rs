//! Run configuration: TOML (or JSON) file, validated before any computation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use steadyent::analysis::{FreeParam, Objective, Target};
use steadyent::dynamics::{EvolveOptions, Integrator};
use steadyent::effective::{EffectiveOptions, RateFormulas, RateSource};
use steadyent::figures::InitialState;
use steadyent::model::{mediating_layout, PhysicalParams, Truncation};

use crate::CliError;

fn unit_coupling() -> f64 {
    1.0
}

/// `[params]`; either `mediating_detunings` or the `delta_x` layout shorthand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsConfig {
    #[serde(default = "unit_coupling")]
    pub g: f64,
    pub omega: f64,
    pub omega_m: f64,
    #[serde(default)]
    pub theta_m: f64,
    pub delta_cap: f64,
    pub delta: f64,
    pub nu: f64,
    pub kappa: f64,
    pub gamma0: f64,
    pub gamma1: f64,
    pub n_mediating: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mediating_detunings: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_x: Option<f64>,
}

impl ParamsConfig {
    pub fn to_params(&self) -> Result<PhysicalParams, CliError> {
        let detunings = match (&self.mediating_detunings, self.delta_x) {
            (Some(_), Some(_)) => {
                return Err(CliError::config("params.delta_x: give either mediating_detunings or delta_x, not both"))
            }
            (Some(d), None) => d.clone(),
            (None, Some(dx)) => mediating_layout(self.n_mediating, dx)?,
            (None, None) if self.n_mediating == 1 => vec![0.0],
            (None, None) => {
                return Err(CliError::config("params.mediating_detunings: required when n_mediating > 1 (or set delta_x)"))
            }
        };
        Ok(PhysicalParams {
            g: self.g,
            omega: self.omega,
            omega_m: self.omega_m,
            theta_m: self.theta_m,
            delta_cap: self.delta_cap,
            delta: self.delta,
            nu: self.nu,
            kappa: self.kappa,
            gamma0: self.gamma0,
            gamma1: self.gamma1,
            n_mediating: self.n_mediating,
            mediating_detunings: detunings,
        })
    }

    pub fn from_params(p: &PhysicalParams) -> Self {
        ParamsConfig {
            g: p.g,
            omega: p.omega,
            omega_m: p.omega_m,
            theta_m: p.theta_m,
            delta_cap: p.delta_cap,
            delta: p.delta,
            nu: p.nu,
            kappa: p.kappa,
            gamma0: p.gamma0,
            gamma1: p.gamma1,
            n_mediating: p.n_mediating,
            mediating_detunings: Some(p.mediating_detunings.clone()),
            delta_x: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncationConfig {
    #[serde(default = "default_cap")]
    pub excitation_cap: usize,
    #[serde(default = "default_per_mode")]
    pub per_mode_cap: usize,
}

fn default_cap() -> usize {
    2
}

fn default_per_mode() -> usize {
    2
}

impl Default for TruncationConfig {
    fn default() -> Self {
        TruncationConfig { excitation_cap: default_cap(), per_mode_cap: default_per_mode() }
    }
}

impl TruncationConfig {
    pub fn truncation(&self) -> Truncation {
        Truncation { excitation_cap: Some(self.excitation_cap), per_mode_cap: self.per_mode_cap }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Rk4,
    Adaptive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorConfig {
    pub method: Method,
    pub dt: f64,
    pub t_final: f64,
    pub record_stride: usize,
    /// Tolerances of the adaptive method.
    pub rtol: f64,
    pub atol: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        let d = EvolveOptions::default();
        IntegratorConfig { method: Method::Rk4, dt: d.dt, t_final: 9000.0, record_stride: d.record_stride, rtol: 1e-8, atol: 1e-10 }
    }
}

impl IntegratorConfig {
    pub fn evolve_options(&self) -> EvolveOptions {
        let method = match self.method {
            Method::Rk4 => Integrator::Rk4,
            Method::Adaptive => Integrator::Adaptive { rtol: self.rtol, atol: self.atol },
        };
        EvolveOptions { dt: self.dt, method, record_stride: self.record_stride }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Emit {
    Csv,
    Json,
    Svg,
}

/// Which master equation `evolve` and `steady` solve.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    Full,
    Effective,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub initial_state: InitialState,
    pub output_dir: PathBuf,
    pub emit: Vec<Emit>,
    pub seed: u64,
    pub model: ModelKind,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            initial_state: InitialState::Ket00,
            output_dir: PathBuf::from("out"),
            emit: vec![Emit::Csv, Emit::Json, Emit::Svg],
            seed: 0,
            model: ModelKind::Full,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    #[default]
    Numeric,
    Analytic,
}

/// `[effective]`: how the 4-level model is built and which closed forms are compared.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EffectiveConfig {
    pub source: SourceKind,
    pub formulas: RateFormulas,
    pub stark: bool,
}

impl EffectiveConfig {
    pub fn options(&self) -> EffectiveOptions {
        let source = match self.source {
            SourceKind::Numeric => RateSource::Numeric,
            SourceKind::Analytic => RateSource::Analytic(self.formulas),
        };
        EffectiveOptions { source, stark: self.stark }
    }
}

/// Names accepted as sweep axes.
pub const AXIS_NAMES: [&str; 14] = [
    "omega",
    "omega_m",
    "theta_m",
    "delta_cap",
    "delta",
    "nu",
    "kappa",
    "gamma0",
    "gamma1",
    "gamma",
    "cooperativity",
    "delta_x",
    "d_omega",
    "d_omega_m",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num: Option<usize>,
}

impl AxisConfig {
    pub fn values(&self) -> Result<Vec<f64>, CliError> {
        let key = format!("sweep.axes.{}", self.name);
        match (&self.values, self.start, self.stop, self.num) {
            (Some(v), None, None, None) if !v.is_empty() => Ok(v.clone()),
            (None, Some(a), Some(b), Some(n)) if n >= 2 => {
                Ok((0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect())
            }
            (None, Some(a), Some(_), Some(1)) => Ok(vec![a]),
            _ => Err(CliError::config(format!("{key}: give a non-empty `values` list or `start`, `stop` and `num`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMethod {
    /// Null-space steady state of the full model.
    #[default]
    FullSteady,
    /// Full model integrated to `integrator.t_final`.
    FullEvolve,
    /// Steady state of the 4-level model.
    EffectiveSteady,
    /// Closed-form estimate.
    Analytic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default)]
    pub method: SweepMethod,
    pub axes: Vec<AxisConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    #[serde(default = "default_target")]
    pub target: Target,
    /// Fit these `(C, 1 - F)` pairs directly instead of optimizing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<(f64, f64)>>,
    #[serde(default = "default_cooperativities")]
    pub cooperativities: Vec<f64>,
    #[serde(default = "default_free")]
    pub free: Vec<FreeParam>,
    #[serde(default = "Objective::analytic")]
    pub objective: Objective,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default = "default_max_iters")]
    pub max_iters: u64,
}

fn default_target() -> Target {
    Target::S
}

fn default_cooperativities() -> Vec<f64> {
    steadyent::figures::FIG4_COOPERATIVITIES.to_vec()
}

fn default_free() -> Vec<FreeParam> {
    vec![FreeParam::Delta, FreeParam::Nu]
}

fn default_restarts() -> usize {
    3
}

fn default_max_iters() -> u64 {
    400
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub params: ParamsConfig,
    #[serde(default)]
    pub truncation: TruncationConfig,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub effective: EffectiveConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitConfig>,
}

impl RunConfig {
    /// Parses by extension: `.json` as JSON, anything else as TOML.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("config: cannot read {}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            Self::from_json(&text)
        } else {
            Self::from_toml(&text)
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::config(format!("config: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::config(format!("config: {e}")))
    }

    /// Applies the `--seed` override and expands the layout shorthand.
    pub fn resolve(mut self, seed: Option<u64>) -> Result<Self, CliError> {
        if let Some(s) = seed {
            self.run.seed = s;
            if let InitialState::Random(_) = self.run.initial_state {
                self.run.initial_state = InitialState::Random(s);
            }
        }
        let p = self.params.to_params()?;
        self.params = ParamsConfig::from_params(&p);
        Ok(self)
    }

    /// Checks every section; returns the weak-coupling warnings.
    pub fn validate(&self) -> Result<Vec<String>, CliError> {
        let warnings = self.params.to_params()?.validate()?;
        let t = &self.truncation;
        if t.per_mode_cap == 0 {
            return Err(CliError::config("truncation.per_mode_cap: must be at least 1"));
        }
        if t.excitation_cap == 0 {
            return Err(CliError::config("truncation.excitation_cap: must be at least 1"));
        }
        let i = &self.integrator;
        if !(i.dt > 0.0 && i.dt.is_finite()) {
            return Err(CliError::config(format!("integrator.dt: must be positive, got {}", i.dt)));
        }
        if !(i.t_final > 0.0 && i.t_final.is_finite()) {
            return Err(CliError::config(format!("integrator.t_final: must be positive, got {}", i.t_final)));
        }
        if i.record_stride == 0 {
            return Err(CliError::config("integrator.record_stride: must be at least 1"));
        }
        if i.method == Method::Adaptive && !(i.rtol > 0.0 && i.atol > 0.0) {
            return Err(CliError::config("integrator.rtol: adaptive tolerances must be positive"));
        }
        if self.run.emit.is_empty() {
            return Err(CliError::config("run.emit: choose at least one of csv, json, svg"));
        }
        if let Some(s) = &self.sweep {
            if s.axes.is_empty() {
                return Err(CliError::config("sweep.axes: at least one axis is required"));
            }
            for a in &s.axes {
                if !AXIS_NAMES.contains(&a.name.as_str()) {
                    return Err(CliError::config(format!(
                        "sweep.axes.name: unknown axis `{}`, expected one of {}",
                        a.name,
                        AXIS_NAMES.join(", ")
                    )));
                }
                a.values()?;
            }
        }
        if let Some(f) = &self.fit {
            if let Some(pts) = &f.points {
                if pts.is_empty() {
                    return Err(CliError::config("fit.points: empty list"));
                }
            } else if f.cooperativities.len() < 2 {
                return Err(CliError::config("fit.cooperativities: need at least two values"));
            }
        }
        Ok(warnings)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("a resolved config always serializes")
    }
}
