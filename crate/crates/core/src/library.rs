//! Built-in scalar problems referenced by name from experiment configs.

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dynamics::{AffineDrift, Dynamics};
use crate::kernel::{ExpTerm, Kernel};
use crate::value::{ClampedQuadratic, ConstantCost, CostModel, RunningCost, SaturatedNorm};
use crate::{Error, Result};

/// Coefficients of `F(x, u, a) = state x + control u + memory a + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftCoeffs {
    pub state: f64,
    pub control: f64,
    pub memory: f64,
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CostSpec {
    /// `L = value`.
    Constant { value: f64 },
    /// `L = min(q x^2, cap) + r u^2`.
    Quadratic { q: f64, r: f64, cap: f64 },
    /// `L = weight min(|x|, cap)`.
    Saturated { weight: f64, cap: f64 },
}

impl CostSpec {
    pub fn build(&self) -> Arc<dyn RunningCost> {
        match *self {
            CostSpec::Constant { value } => Arc::new(ConstantCost(value)),
            CostSpec::Quadratic { q, r, cap } => Arc::new(ClampedQuadratic { q, r, cap }),
            CostSpec::Saturated { weight, cap } => Arc::new(SaturatedNorm { weight, cap }),
        }
    }
}

/// Scalar memory weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum KernelSpec {
    /// `coeff e^{-rate s}`.
    Exponential { rate: f64, coeff: f64 },
    /// `sum_i c_i e^{-r_i s}` given as `[[r_1, c_1], ...]`.
    SumOfExponentials { terms: Vec<[f64; 2]> },
    /// Rows `s, A(s)` on a uniform grid starting at 0.
    Tabulated {
        path: PathBuf,
        #[serde(default)]
        smooth: bool,
    },
}

impl KernelSpec {
    pub fn build(&self) -> Result<Kernel> {
        match self {
            KernelSpec::Exponential { rate, coeff } => Kernel::exponential(*rate, *coeff),
            KernelSpec::SumOfExponentials { terms } => Kernel::sum_of_exponentials(
                terms.iter().map(|&[rate, coeff]| ExpTerm { rate, coeff: vec![coeff] }).collect(),
                1,
                1,
            ),
            KernelSpec::Tabulated { path, smooth } => Kernel::tabulated_from_csv(path, 1, 1, *smooth),
        }
    }

    /// `delta` when the weight is exactly `e^{-delta s}`.
    pub fn unit_exponential_rate(&self) -> Option<f64> {
        match *self {
            KernelSpec::Exponential { rate, coeff } if coeff == 1.0 => Some(rate),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub summary: &'static str,
    pub drift: DriftCoeffs,
    pub cost: CostSpec,
    pub lambda: f64,
    pub controls: Vec<f64>,
    pub kernel: KernelSpec,
}

pub const PRESET_NAMES: [&str; 5] = ["constant-cost", "uncontrolled-lq", "controlled-memory-lq", "bang-bang", "linear-memory"];

pub fn preset(name: &str) -> Result<Preset> {
    let unit = KernelSpec::Exponential { rate: 1.0, coeff: 1.0 };
    let p = match name {
        "constant-cost" => Preset {
            name: "constant-cost",
            summary: "F = 0, L = 1; value 1/lambda everywhere",
            drift: DriftCoeffs { state: 0.0, control: 0.0, memory: 0.0, offset: 0.0 },
            cost: CostSpec::Constant { value: 1.0 },
            lambda: 1.0,
            controls: vec![0.0],
            kernel: unit,
        },
        "uncontrolled-lq" => Preset {
            name: "uncontrolled-lq",
            summary: "F = -x, L = min(x^2, 4); value x^2/3 for |x| <= 2",
            drift: DriftCoeffs { state: -1.0, control: 0.0, memory: 0.0, offset: 0.0 },
            cost: CostSpec::Quadratic { q: 1.0, r: 0.0, cap: 4.0 },
            lambda: 1.0,
            controls: vec![0.0],
            kernel: unit,
        },
        "controlled-memory-lq" => Preset {
            name: "controlled-memory-lq",
            summary: "F = u - int e^{-s} y(t-s) ds, L = min(x^2, 4) + u^2/10, K = {-1, 0, 1}",
            drift: DriftCoeffs { state: 0.0, control: 1.0, memory: -1.0, offset: 0.0 },
            cost: CostSpec::Quadratic { q: 1.0, r: 0.1, cap: 4.0 },
            lambda: 1.0,
            controls: vec![-1.0, 0.0, 1.0],
            kernel: unit,
        },
        "bang-bang" => Preset {
            name: "bang-bang",
            summary: "F = x/2 + u - a, L = min(|x|, 1), K = {-1, 1}",
            drift: DriftCoeffs { state: 0.5, control: 1.0, memory: -1.0, offset: 0.0 },
            cost: CostSpec::Saturated { weight: 1.0, cap: 1.0 },
            lambda: 1.0,
            controls: vec![-1.0, 1.0],
            kernel: unit,
        },
        "linear-memory" => Preset {
            name: "linear-memory",
            summary: "F = 8x + 8a with a weak memory 1e-3 e^{-s}, L = min(|x|, 1)",
            drift: DriftCoeffs { state: 8.0, control: 0.0, memory: 8.0, offset: 0.0 },
            cost: CostSpec::Saturated { weight: 1.0, cap: 1.0 },
            lambda: 4.5,
            controls: vec![0.0],
            kernel: KernelSpec::Exponential { rate: 1.0, coeff: 1e-3 },
        },
        _ => {
            return Err(Error::invalid(
                "preset",
                format!("unknown preset `{name}`, expected one of {}", PRESET_NAMES.join(", ")),
            ))
        }
    };
    Ok(p)
}

impl Preset {
    pub fn dynamics(&self) -> Result<Dynamics> {
        let c = self.drift;
        Dynamics::new(Arc::new(AffineDrift::scalar(c.state, c.control, c.memory, c.offset)), self.controls.clone())
    }

    pub fn cost_model(&self) -> Result<CostModel> {
        CostModel::new(self.cost.build(), self.lambda)
    }

    pub fn kernel(&self) -> Result<Kernel> {
        self.kernel.build()
    }
}
