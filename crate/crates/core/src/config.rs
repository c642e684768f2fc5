//! TOML experiment configuration.
//!
//! ```toml
//! kind = "value"
//! seed = 7
//!
//! [problem]
//! preset = "controlled-memory-lq"
//! lambda = 1.0
//!
//! [discretization]
//! h = 0.01
//!
//! [initial]
//! x = 1.0
//! past = { kind = "exponential", rate = 1.0, amplitude = 1.0 }
//!
//! [value]
//! intervals = [1, 2]
//! control_horizon = 2.0
//! ```

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::grid::Tail;
use crate::kernel::HistoryState;
use crate::library::{self, CostSpec, KernelSpec, Preset};

#[derive(Debug, Clone, PartialEq)]
pub enum ConfigError {
    /// TOML syntax or schema violation, message carries line and column.
    Parse(String),
    Invalid { field: String, reason: String },
    Io(String),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Parse(m) => write!(f, "config parse error: {m}"),
            ConfigError::Invalid { field, reason } => write!(f, "invalid config field `{field}`: {reason}"),
            ConfigError::Io(m) => write!(f, "cannot read config: {m}"),
        }
    }
}

impl std::error::Error for ConfigError {}

fn invalid(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field: field.to_string(), reason: reason.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Simulate,
    Value,
    Dpp,
    Bop,
    Hjb2d,
    Xval,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 6] = [
        ExperimentKind::Simulate,
        ExperimentKind::Value,
        ExperimentKind::Dpp,
        ExperimentKind::Bop,
        ExperimentKind::Hjb2d,
        ExperimentKind::Xval,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::Value => "value",
            ExperimentKind::Dpp => "dpp",
            ExperimentKind::Bop => "bop",
            ExperimentKind::Hjb2d => "hjb2d",
            ExperimentKind::Xval => "xval",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub problem: ProblemConfig,
    pub discretization: Discretization,
    #[serde(default)]
    pub initial: InitialConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<ValueConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dpp: Option<DppConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bop: Option<BopConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hjb2d: Option<Hjb2dConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xval: Option<XvalConfig>,
}

/// A library preset with optional coefficient overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub preset: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub controls: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<DriftOverride>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<CostSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftOverride {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memory: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Discretization {
    /// Time step.
    pub h: f64,
    /// Step of the past grid, defaults to `h`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_z: Option<f64>,
    #[serde(default = "default_s_max")]
    pub s_max: f64,
    /// Horizon `T`; defaults to the truncation horizon of the discounted cost.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default = "default_truncation_tol")]
    pub truncation_tol: f64,
}

fn default_s_max() -> f64 {
    20.0
}

fn default_truncation_tol() -> f64 {
    1e-8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    #[serde(default)]
    pub x: f64,
    #[serde(default)]
    pub past: PastSpec,
}

impl Default for InitialConfig {
    fn default() -> Self {
        Self { x: 0.0, past: PastSpec::Zero }
    }
}

/// Past trajectory `z(s)`, `s > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PastSpec {
    #[default]
    Zero,
    /// `amplitude e^{-rate s}`.
    Exponential { rate: f64, amplitude: f64 },
    /// `x e^{-rate s}`, continuous at `s = 0`.
    Matched { rate: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Solver {
    #[default]
    Rk4,
    Quadrature,
    Picard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    /// Control indices on equal pieces of `[0, T]`.
    #[serde(default = "default_control")]
    pub control: Vec<usize>,
    #[serde(default)]
    pub solver: Solver,
    /// Weight of the Picard norm, defaults to `2C + 1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default = "default_picard_iter")]
    pub max_iter: usize,
    /// Random points used to check the declared Lipschitz constant.
    #[serde(default = "default_samples")]
    pub lipschitz_samples: usize,
}

fn default_control() -> Vec<usize> {
    vec![0]
}

fn default_picard_iter() -> usize {
    200
}

fn default_samples() -> usize {
    256
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Search {
    #[default]
    Exhaustive,
    CoordinateDescent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValueConfig {
    /// One estimate per entry, each the number of control pieces.
    pub intervals: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control_horizon: Option<f64>,
    #[serde(default)]
    pub search: Search,
    #[serde(default = "default_sweeps")]
    pub max_sweeps: usize,
    #[serde(default = "default_max_candidates")]
    pub max_candidates: usize,
}

fn default_sweeps() -> usize {
    20
}

fn default_max_candidates() -> usize {
    1_000_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DppConfig {
    pub split: f64,
    /// Refinement levels of the control family.
    pub intervals: Vec<usize>,
    #[serde(default = "default_outer")]
    pub outer_intervals: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control_horizon: Option<f64>,
    /// Bound on the residual at the finest level.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
}

fn default_outer() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct BopConfig {
    /// Random extra points on which the operator inequalities are checked.
    #[serde(default)]
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hjb2dConfig {
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    pub nx: usize,
    pub ny: usize,
    pub dt: f64,
    #[serde(default = "default_hjb_tol")]
    pub tol: f64,
    #[serde(default = "default_hjb_iter")]
    pub max_iter: usize,
}

fn default_hjb_tol() -> f64 {
    1e-10
}

fn default_hjb_iter() -> usize {
    100_000
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct XvalLevel {
    pub intervals: usize,
    /// Nodes per axis of the reduced grid.
    pub n: usize,
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct XvalConfig {
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    pub levels: Vec<XvalLevel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control_horizon: Option<f64>,
    #[serde(default = "default_hjb_tol")]
    pub tol: f64,
    #[serde(default = "default_hjb_iter")]
    pub max_iter: usize,
    /// Bound on the gap at the finest level.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
}

fn positive(field: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(field, format!("must be positive and finite, got {v}")))
    }
}

fn finite(field: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(invalid(field, format!("must be finite, got {v}")))
    }
}

fn range(field: &str, r: [f64; 2]) -> Result<(), ConfigError> {
    if r[0].is_finite() && r[1].is_finite() && r[0] < r[1] {
        Ok(())
    } else {
        Err(invalid(field, format!("need lo < hi, got {r:?}")))
    }
}

fn nonempty_positive(field: &str, v: &[usize]) -> Result<(), ConfigError> {
    if v.is_empty() || v.contains(&0) {
        Err(invalid(field, "need a non-empty list of positive integers"))
    } else {
        Ok(())
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn h_z(&self) -> f64 {
        self.discretization.h_z.unwrap_or(self.discretization.h)
    }

    /// The preset with every override applied.
    pub fn resolved_problem(&self) -> Result<Preset, ConfigError> {
        let p = &self.problem;
        let mut preset = library::preset(&p.preset).map_err(|e| invalid("problem.preset", e.to_string()))?;
        if let Some(l) = p.lambda {
            preset.lambda = l;
        }
        if let Some(c) = &p.controls {
            preset.controls = c.clone();
        }
        if let Some(d) = p.drift {
            let c = &mut preset.drift;
            c.state = d.state.unwrap_or(c.state);
            c.control = d.control.unwrap_or(c.control);
            c.memory = d.memory.unwrap_or(c.memory);
            c.offset = d.offset.unwrap_or(c.offset);
        }
        if let Some(c) = &p.cost {
            preset.cost = c.clone();
        }
        if let Some(k) = &p.kernel {
            preset.kernel = k.clone();
        }
        Ok(preset)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let prob = self.resolved_problem()?;
        positive("problem.lambda", prob.lambda)?;
        if prob.controls.is_empty() {
            return Err(invalid("problem.controls", "need at least one control value"));
        }
        for u in &prob.controls {
            finite("problem.controls", *u)?;
        }
        let d = prob.drift;
        for (name, v) in [
            ("problem.drift.state", d.state),
            ("problem.drift.control", d.control),
            ("problem.drift.memory", d.memory),
            ("problem.drift.offset", d.offset),
        ] {
            finite(name, v)?;
        }
        match prob.cost {
            CostSpec::Constant { value } => finite("problem.cost.value", value)?,
            CostSpec::Quadratic { q, r, cap } => {
                positive("problem.cost.cap", cap)?;
                for (name, v) in [("problem.cost.q", q), ("problem.cost.r", r)] {
                    if !(v >= 0.0 && v.is_finite()) {
                        return Err(invalid(name, format!("must be non-negative, got {v}")));
                    }
                }
            }
            CostSpec::Saturated { weight, cap } => {
                finite("problem.cost.weight", weight)?;
                positive("problem.cost.cap", cap)?;
            }
        }
        match &prob.kernel {
            KernelSpec::Exponential { rate, coeff } => {
                positive("problem.kernel.rate", *rate)?;
                finite("problem.kernel.coeff", *coeff)?;
            }
            KernelSpec::SumOfExponentials { terms } => {
                if terms.is_empty() {
                    return Err(invalid("problem.kernel.terms", "need at least one term"));
                }
                for t in terms {
                    positive("problem.kernel.terms", t[0])?;
                    finite("problem.kernel.terms", t[1])?;
                }
            }
            KernelSpec::Tabulated { .. } => {}
        }
        let disc = &self.discretization;
        positive("discretization.h", disc.h)?;
        positive("discretization.h_z", self.h_z())?;
        positive("discretization.s_max", disc.s_max)?;
        positive("discretization.truncation_tol", disc.truncation_tol)?;
        if let Some(t) = disc.horizon {
            positive("discretization.horizon", t)?;
        }
        match self.initial.past {
            PastSpec::Zero => {}
            PastSpec::Exponential { rate, amplitude } => {
                positive("initial.past.rate", rate)?;
                finite("initial.past.amplitude", amplitude)?;
            }
            PastSpec::Matched { rate } => positive("initial.past.rate", rate)?,
        }
        finite("initial.x", self.initial.x)?;
        self.validate_kind(&prob)
    }

    fn validate_kind(&self, prob: &Preset) -> Result<(), ConfigError> {
        let missing = |kind: ExperimentKind| invalid(kind.name(), format!("a `[{}]` table is required for kind = \"{}\"", kind.name(), kind.name()));
        let k = prob.controls.len();
        match self.kind {
            ExperimentKind::Simulate => {
                let s = self.simulate.as_ref().ok_or_else(|| missing(self.kind))?;
                if s.control.is_empty() {
                    return Err(invalid("simulate.control", "need at least one control index"));
                }
                if let Some(bad) = s.control.iter().find(|&&i| i >= k) {
                    return Err(invalid("simulate.control", format!("index {bad} out of range for {k} controls")));
                }
                if let Some(t) = s.theta {
                    positive("simulate.theta", t)?;
                }
                if s.max_iter == 0 {
                    return Err(invalid("simulate.max_iter", "must be positive"));
                }
            }
            ExperimentKind::Value => {
                let v = self.value.as_ref().ok_or_else(|| missing(self.kind))?;
                nonempty_positive("value.intervals", &v.intervals)?;
                if let Some(t) = v.control_horizon {
                    positive("value.control_horizon", t)?;
                }
            }
            ExperimentKind::Dpp => {
                let v = self.dpp.as_ref().ok_or_else(|| missing(self.kind))?;
                positive("dpp.split", v.split)?;
                nonempty_positive("dpp.intervals", &v.intervals)?;
                if v.outer_intervals == 0 {
                    return Err(invalid("dpp.outer_intervals", "must be positive"));
                }
                if let Some(t) = v.control_horizon {
                    positive("dpp.control_horizon", t)?;
                }
                if let Some(t) = v.tolerance {
                    positive("dpp.tolerance", t)?;
                }
            }
            ExperimentKind::Bop => {}
            ExperimentKind::Hjb2d => {
                let g = self.hjb2d.as_ref().ok_or_else(|| missing(self.kind))?;
                self.reduced_rate("hjb2d", prob)?;
                range("hjb2d.x_range", g.x_range)?;
                range("hjb2d.y_range", g.y_range)?;
                if g.nx < 3 || g.ny < 3 {
                    return Err(invalid("hjb2d.nx", "need at least 3 nodes per axis"));
                }
                positive("hjb2d.dt", g.dt)?;
                positive("hjb2d.tol", g.tol)?;
            }
            ExperimentKind::Xval => {
                let x = self.xval.as_ref().ok_or_else(|| missing(self.kind))?;
                self.reduced_rate("xval", prob)?;
                range("xval.x_range", x.x_range)?;
                range("xval.y_range", x.y_range)?;
                if x.levels.is_empty() {
                    return Err(invalid("xval.levels", "need at least one level"));
                }
                for l in &x.levels {
                    if l.intervals == 0 {
                        return Err(invalid("xval.levels.intervals", "must be positive"));
                    }
                    if l.n < 3 {
                        return Err(invalid("xval.levels.n", "need at least 3 nodes per axis"));
                    }
                    positive("xval.levels.dt", l.dt)?;
                }
                positive("xval.tol", x.tol)?;
                if let Some(t) = x.control_horizon {
                    positive("xval.control_horizon", t)?;
                }
                if let Some(t) = x.tolerance {
                    positive("xval.tolerance", t)?;
                }
            }
        }
        Ok(())
    }

    fn reduced_rate(&self, table: &str, prob: &Preset) -> Result<f64, ConfigError> {
        prob.kernel.unit_exponential_rate().ok_or_else(|| {
            invalid(
                "problem.kernel",
                format!("`{table}` needs the kernel e^{{-delta s}} (exponential with coeff = 1)"),
            )
        })
    }

    /// Initial point on the past grid `[0, s_max]`.
    pub fn initial_state(&self) -> crate::Result<HistoryState> {
        let (x, h, s) = (self.initial.x, self.h_z(), self.discretization.s_max);
        match self.initial.past {
            PastSpec::Zero => HistoryState::with_zero_past(vec![x], h, s),
            PastSpec::Exponential { rate, amplitude } => {
                HistoryState::scalar(x, h, s, Tail::ExponentialDecay(rate), |t| amplitude * (-rate * t).exp())
            }
            PastSpec::Matched { rate } => HistoryState::scalar(x, h, s, Tail::ExponentialDecay(rate), |t| x * (-rate * t).exp()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
kind = "simulate"
[problem]
preset = "uncontrolled-lq"
[discretization]
h = 0.01
[simulate]
"#;

    #[test]
    fn minimal_config_parses() {
        let c = ExperimentConfig::from_toml(BASE).unwrap();
        assert_eq!(c.kind, ExperimentKind::Simulate);
        assert_eq!(c.h_z(), 0.01);
        assert_eq!(c.discretization.s_max, 20.0);
        assert_eq!(c.simulate.unwrap().control, vec![0]);
    }

    #[test]
    fn negative_lambda_names_the_field() {
        let text = BASE.replace("preset = \"uncontrolled-lq\"", "preset = \"uncontrolled-lq\"\nlambda = -1.0");
        match ExperimentConfig::from_toml(&text) {
            Err(ConfigError::Invalid { field, .. }) => assert_eq!(field, "problem.lambda"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected_with_location() {
        let text = BASE.replace("h = 0.01", "h = 0.01\nstep = 3");
        match ExperimentConfig::from_toml(&text) {
            Err(ConfigError::Parse(m)) => {
                assert!(m.contains("step"), "{m}");
                assert!(m.contains("line"), "{m}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_kind_table() {
        let text = BASE.replace("[simulate]", "");
        match ExperimentConfig::from_toml(&text) {
            Err(ConfigError::Invalid { field, .. }) => assert_eq!(field, "simulate"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn overrides_apply() {
        let text = BASE.replace("[discretization]", "drift = { state = 2.0 }\ncost = { kind = \"constant\", value = 3.0 }\n[discretization]");
        let c = ExperimentConfig::from_toml(&text).unwrap();
        let p = c.resolved_problem().unwrap();
        assert_eq!(p.drift.state, 2.0);
        assert_eq!(p.cost, CostSpec::Constant { value: 3.0 });
    }

    #[test]
    fn reduced_kinds_need_unit_exponential() {
        let text = r#"
kind = "hjb2d"
[problem]
preset = "linear-memory"
[discretization]
h = 0.01
[hjb2d]
x_range = [-1.0, 1.0]
y_range = [-1.0, 1.0]
nx = 11
ny = 11
dt = 0.01
"#;
        match ExperimentConfig::from_toml(text) {
            Err(ConfigError::Invalid { field, .. }) => assert_eq!(field, "problem.kernel"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn round_trip_through_json() {
        let text = BASE.replace("[simulate]", "[initial]\nx = 1.5\npast = { kind = \"matched\", rate = 2.0 }\n[simulate]\nsolver = \"picard\"");
        let c = ExperimentConfig::from_toml(&text).unwrap();
        let json = serde_json::to_value(&c).unwrap();
        let back: ExperimentConfig = serde_json::from_value(json).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn matched_past_is_continuous() {
        let text = BASE.replace("[simulate]", "[initial]\nx = 1.5\npast = { kind = \"matched\", rate = 2.0 }\n[simulate]");
        let c = ExperimentConfig::from_toml(&text).unwrap();
        let a = c.initial_state().unwrap();
        assert!(a.in_e0(1e-12));
    }
}
