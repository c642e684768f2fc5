//! Uniformly sampled functions on a half line window `[0, S]`.
//!
//! A [`GridFn`] stores `dim` components per node, node `j` sitting at
//! `s = j * step`. Beyond the window the function is continued by its
//! [`Tail`] policy, which is what every quadrature in the crate uses to
//! account for the part of `(0, inf)` that is not sampled.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Continuation of a sampled function past its last node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Tail {
    /// Identically zero beyond the window.
    #[default]
    Zero,
    /// `f(s) = f(S) exp(-rate (s - S))` for `s > S`.
    ExponentialDecay(f64),
}

impl Tail {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Tail::Zero => Ok(()),
            Tail::ExponentialDecay(r) if r > 0.0 && r.is_finite() => Ok(()),
            Tail::ExponentialDecay(r) => Err(Error::invalid(
                "tail",
                format!("decay rate must be positive, got {r}"),
            )),
        }
    }

    /// Multiplier applied to the last sample at distance `ds >= 0` past the window.
    pub fn factor(&self, ds: f64) -> f64 {
        match *self {
            Tail::Zero => 0.0,
            Tail::ExponentialDecay(r) => (-r * ds).exp(),
        }
    }

    /// `int_S^inf f g` for two tails hanging off samples `f_s`, `g_s` (per unit product).
    pub(crate) fn product_integral(a: Tail, b: Tail) -> f64 {
        match (a, b) {
            (Tail::ExponentialDecay(r1), Tail::ExponentialDecay(r2)) => 1.0 / (r1 + r2),
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridFn {
    step: f64,
    dim: usize,
    data: Vec<f64>,
    tail: Tail,
}

impl GridFn {
    pub fn new(step: f64, dim: usize, data: Vec<f64>, tail: Tail) -> Result<Self> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::invalid("step", format!("must be positive, got {step}")));
        }
        if dim == 0 {
            return Err(Error::invalid("dim", "must be at least 1"));
        }
        if data.len() % dim != 0 || data.len() / dim < 2 {
            return Err(Error::invalid(
                "samples",
                format!("need at least two nodes of {dim} components, got {} values", data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("samples", "non-finite sample"));
        }
        tail.validate()?;
        Ok(Self {
            step,
            dim,
            data,
            tail,
        })
    }

    /// Scalar grid function from its node values.
    pub fn scalar(step: f64, samples: Vec<f64>, tail: Tail) -> Result<Self> {
        Self::new(step, 1, samples, tail)
    }

    /// Number of nodes needed to cover `[0, horizon]` at `step`.
    pub fn node_count(step: f64, horizon: f64) -> Result<usize> {
        if !(step > 0.0) || !(horizon > 0.0) {
            return Err(Error::invalid(
                "window",
                format!("step and horizon must be positive (step {step}, horizon {horizon})"),
            ));
        }
        let n = horizon / step;
        let rounded = n.round();
        if (n - rounded).abs() > 1e-9 * n.max(1.0) {
            return Err(Error::invalid(
                "window",
                format!("horizon {horizon} is not a multiple of step {step}"),
            ));
        }
        Ok(rounded as usize + 1)
    }

    pub fn zeros(step: f64, horizon: f64, dim: usize) -> Result<Self> {
        let n = Self::node_count(step, horizon)?;
        Self::new(step, dim, vec![0.0; n * dim], Tail::Zero)
    }

    /// Samples `f` at every node of `[0, horizon]`.
    pub fn from_fn(
        step: f64,
        horizon: f64,
        dim: usize,
        tail: Tail,
        mut f: impl FnMut(f64, &mut [f64]),
    ) -> Result<Self> {
        let n = Self::node_count(step, horizon)?;
        let mut data = vec![0.0; n * dim];
        for (j, chunk) in data.chunks_mut(dim).enumerate() {
            f(j as f64 * step, chunk);
        }
        Self::new(step, dim, data, tail)
    }

    pub fn from_scalar_fn(
        step: f64,
        horizon: f64,
        tail: Tail,
        f: impl Fn(f64) -> f64,
    ) -> Result<Self> {
        Self::from_fn(step, horizon, 1, tail, |s, out| out[0] = f(s))
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nodes(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn horizon(&self) -> f64 {
        (self.nodes() - 1) as f64 * self.step
    }

    pub fn tail(&self) -> Tail {
        self.tail
    }

    pub fn with_tail(mut self, tail: Tail) -> Result<Self> {
        tail.validate()?;
        self.tail = tail;
        Ok(self)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn node(&self, j: usize) -> &[f64] {
        &self.data[j * self.dim..(j + 1) * self.dim]
    }

    pub fn first(&self) -> &[f64] {
        self.node(0)
    }

    pub fn last(&self) -> &[f64] {
        self.node(self.nodes() - 1)
    }

    /// Component `c` as a contiguous vector.
    pub fn component(&self, c: usize) -> Vec<f64> {
        self.data.iter().skip(c).step_by(self.dim).copied().collect()
    }

    /// Builds a grid function with the same layout from per-component columns.
    pub fn from_components(step: f64, columns: &[Vec<f64>], tail: Tail) -> Result<Self> {
        let dim = columns.len();
        let n = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != n) {
            return Err(Error::invalid("columns", "components have different lengths"));
        }
        let mut data = Vec::with_capacity(n * dim);
        for j in 0..n {
            data.extend(columns.iter().map(|c| c[j]));
        }
        Self::new(step, dim, data, tail)
    }

    pub fn same_grid(&self, other: &GridFn) -> bool {
        self.dim == other.dim && self.nodes() == other.nodes() && self.step == other.step
    }

    pub(crate) fn check_same_grid(&self, other: &GridFn, name: &'static str) -> Result<()> {
        if self.same_grid(other) {
            Ok(())
        } else {
            Err(Error::invalid(
                name,
                format!(
                    "grids differ: ({} nodes, step {}, dim {}) vs ({} nodes, step {}, dim {})",
                    self.nodes(),
                    self.step,
                    self.dim,
                    other.nodes(),
                    other.step,
                    other.dim
                ),
            ))
        }
    }

    /// Piecewise-linear evaluation, continued by the tail past the window.
    /// Negative arguments are clamped to the first node.
    pub fn value_at(&self, s: f64, out: &mut [f64]) {
        let horizon = self.horizon();
        if s >= horizon {
            let f = self.tail.factor(s - horizon);
            for (o, v) in out.iter_mut().zip(self.last()) {
                *o = f * v;
            }
            return;
        }
        let s = s.max(0.0);
        let pos = s / self.step;
        let j = (pos.floor() as usize).min(self.nodes() - 2);
        let theta = pos - j as f64;
        let (a, b) = (self.node(j), self.node(j + 1));
        for c in 0..self.dim {
            out[c] = a[c] + theta * (b[c] - a[c]);
        }
    }

    /// `a * self + b * other`, keeping `self`'s tail.
    pub fn combine(&self, a: f64, other: &GridFn, b: f64) -> Result<GridFn> {
        self.check_same_grid(other, "combine")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(x, y)| a * x + b * y)
            .collect();
        GridFn::new(self.step, self.dim, data, self.tail)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<GridFn> {
        GridFn::new(
            self.step,
            self.dim,
            self.data.iter().map(|&v| f(v)).collect(),
            self.tail,
        )
    }

    pub fn sup_norm(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Trapezoid `L^2` inner product over the window plus the analytic tail product.
    pub fn dot(&self, other: &GridFn) -> Result<f64> {
        self.check_same_grid(other, "dot")?;
        Ok(self.weighted_dot(other, Rule::Trapezoid))
    }

    pub fn l2_norm_sq(&self) -> f64 {
        self.weighted_dot(self, Rule::Trapezoid)
    }

    pub fn l2_norm(&self) -> f64 {
        self.l2_norm_sq().sqrt()
    }

    pub(crate) fn weighted_dot(&self, other: &GridFn, rule: Rule) -> f64 {
        let n = self.nodes();
        let dim = self.dim;
        let mut acc = 0.0;
        for j in 0..n {
            let w = rule.weight(j, n);
            let (a, b) = (self.node(j), other.node(j));
            let mut p = 0.0;
            for c in 0..dim {
                p += a[c] * b[c];
            }
            acc += w * p;
        }
        let tail: f64 = self
            .last()
            .iter()
            .zip(other.last())
            .map(|(a, b)| a * b)
            .sum::<f64>()
            * Tail::product_integral(self.tail, other.tail);
        acc * self.step + tail
    }

    /// Centered differences inside, second-order one-sided at both ends.
    pub fn derivative(&self) -> Result<GridFn> {
        let n = self.nodes();
        if n < 3 {
            return Err(Error::invalid("samples", "derivative needs at least three nodes"));
        }
        let h = self.step;
        let dim = self.dim;
        let mut out = vec![0.0; self.data.len()];
        for c in 0..dim {
            let f = |j: usize| self.data[j * dim + c];
            out[c] = (-3.0 * f(0) + 4.0 * f(1) - f(2)) / (2.0 * h);
            for j in 1..n - 1 {
                out[j * dim + c] = (f(j + 1) - f(j - 1)) / (2.0 * h);
            }
            out[(n - 1) * dim + c] = (3.0 * f(n - 1) - 4.0 * f(n - 2) + f(n - 3)) / (2.0 * h);
        }
        GridFn::new(h, dim, out, self.tail)
    }
}

/// Node weights (in units of the step) of the composite rules used on grids.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Rule {
    Trapezoid,
    /// Trapezoid with second-order Gregory end corrections (fourth-order overall).
    Gregory,
}

impl Rule {
    pub(crate) fn weight(self, j: usize, n: usize) -> f64 {
        match self {
            Rule::Trapezoid => {
                if j == 0 || j + 1 == n {
                    0.5
                } else {
                    1.0
                }
            }
            Rule::Gregory => {
                const ENDS: [f64; 3] = [3.0 / 8.0, 7.0 / 6.0, 23.0 / 24.0];
                let from_end = j.min(n - 1 - j);
                if from_end < 3 {
                    ENDS[from_end]
                } else {
                    1.0
                }
            }
        }
    }
}

/// Composite trapezoid over uniformly spaced samples.
pub fn trapezoid(step: f64, samples: &[f64]) -> f64 {
    match samples.len() {
        0 | 1 => 0.0,
        n => step * (0.5 * (samples[0] + samples[n - 1]) + samples[1..n - 1].iter().sum::<f64>()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn trapezoid_is_exact_for_linear_functions() {
        let g = GridFn::from_scalar_fn(0.1, 2.0, Tail::Zero, |s| 3.0 - s).unwrap();
        let ones = GridFn::from_scalar_fn(0.1, 2.0, Tail::Zero, |_| 1.0).unwrap();
        assert_relative_eq!(g.dot(&ones).unwrap(), 4.0, epsilon = 1e-12);
    }

    #[test]
    fn exponential_tail_adds_closed_form_remainder() {
        let g = GridFn::from_scalar_fn(1e-3, 5.0, Tail::ExponentialDecay(1.0), |s| (-s).exp()).unwrap();
        // int_0^inf e^{-2s} = 1/2
        assert_relative_eq!(g.l2_norm_sq(), 0.5, epsilon = 1e-6);
    }

    #[test]
    fn gregory_weights_integrate_cubics_exactly() {
        let g = GridFn::from_scalar_fn(0.05, 1.0, Tail::Zero, |s| s * s * s - s + 2.0).unwrap();
        let ones = GridFn::from_scalar_fn(0.05, 1.0, Tail::Zero, |_| 1.0).unwrap();
        let v = g.weighted_dot(&ones, Rule::Gregory);
        assert_relative_eq!(v, 0.25 - 0.5 + 2.0, epsilon = 1e-13);
    }

    #[test]
    fn interpolation_and_tail() {
        let g = GridFn::scalar(0.5, vec![0.0, 1.0, 3.0], Tail::ExponentialDecay(2.0)).unwrap();
        let mut out = [0.0];
        g.value_at(0.75, &mut out);
        assert_relative_eq!(out[0], 2.0);
        g.value_at(1.5, &mut out);
        assert_relative_eq!(out[0], 3.0 * (-1.0_f64).exp());
        g.value_at(-1.0, &mut out);
        assert_eq!(out[0], 0.0);
    }

    #[test]
    fn derivative_is_second_order_at_the_ends() {
        let g = GridFn::from_scalar_fn(1e-2, 1.0, Tail::Zero, |s| s * s).unwrap();
        let d = g.derivative().unwrap();
        assert_relative_eq!(d.first()[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(d.last()[0], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn rejects_bad_layouts() {
        assert!(GridFn::scalar(0.0, vec![1.0, 2.0], Tail::Zero).is_err());
        assert!(GridFn::scalar(0.1, vec![1.0], Tail::Zero).is_err());
        assert!(GridFn::new(0.1, 2, vec![1.0, 2.0, 3.0], Tail::Zero).is_err());
        assert!(GridFn::scalar(0.1, vec![1.0, f64::NAN], Tail::Zero).is_err());
        assert!(GridFn::scalar(0.1, vec![1.0, 2.0], Tail::ExponentialDecay(-1.0)).is_err());
        assert!(GridFn::node_count(0.3, 1.0).is_err());
    }
}
