//! Controlled state equations with memory
//!
//! ```text
//! y'(t) = F(y(t), u(t), int_0^inf A(s) y(t - s) ds),   y(0) = x,  y(-s) = z(s)
//! ```
//!
//! solved by classical RK4 (with an exact auxiliary channel for exponential
//! kernels) and, independently, by Picard iteration of the integral map in a
//! weighted sup norm.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::GridFn;
use crate::kernel::{self, euclid_dist, euclid_norm, HistoryState, Kernel};

/// Right-hand side `F(x, u, a)` of the state equation.
pub trait Drift: Send + Sync + fmt::Debug {
    fn state_dim(&self) -> usize;
    fn memory_dim(&self) -> usize;
    fn eval(&self, x: &[f64], u: f64, a: &[f64], out: &mut [f64]);
    /// Declared `C1` with `|F(x,u,a) - F(y,u,b)| <= C1 (|x - y| + |a - b|)`.
    fn lipschitz(&self) -> f64;
}

/// `F(x, u, a) = S x + b u + M a + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineDrift {
    d: usize,
    k: usize,
    state: Vec<f64>,
    control: Vec<f64>,
    memory: Vec<f64>,
    offset: Vec<f64>,
}

impl AffineDrift {
    /// `state` is `d x d`, `memory` is `d x k` (row-major), `control` and `offset` have length `d`.
    pub fn new(d: usize, k: usize, state: Vec<f64>, control: Vec<f64>, memory: Vec<f64>, offset: Vec<f64>) -> Result<Self> {
        let checks: [(&'static str, usize, usize); 4] = [
            ("drift.state", d * d, state.len()),
            ("drift.control", d, control.len()),
            ("drift.memory", d * k, memory.len()),
            ("drift.offset", d, offset.len()),
        ];
        for (name, expected, found) in checks {
            if expected != found {
                return Err(Error::DimensionMismatch { name, expected, found });
            }
        }
        if d == 0 || k == 0 {
            return Err(Error::invalid("drift", "dimensions must be positive"));
        }
        if state.iter().chain(&control).chain(&memory).chain(&offset).any(|v| !v.is_finite()) {
            return Err(Error::invalid("drift", "non-finite coefficient"));
        }
        Ok(Self { d, k, state, control, memory, offset })
    }

    /// Scalar `F(x, u, a) = s x + b u + m a + c`.
    pub fn scalar(state: f64, control: f64, memory: f64, offset: f64) -> Self {
        Self {
            d: 1,
            k: 1,
            state: vec![state],
            control: vec![control],
            memory: vec![memory],
            offset: vec![offset],
        }
    }
}

impl Drift for AffineDrift {
    fn state_dim(&self) -> usize {
        self.d
    }

    fn memory_dim(&self) -> usize {
        self.k
    }

    fn eval(&self, x: &[f64], u: f64, a: &[f64], out: &mut [f64]) {
        for r in 0..self.d {
            let mut v = self.offset[r] + self.control[r] * u;
            for c in 0..self.d {
                v += self.state[r * self.d + c] * x[c];
            }
            for c in 0..self.k {
                v += self.memory[r * self.k + c] * a[c];
            }
            out[r] = v;
        }
    }

    fn lipschitz(&self) -> f64 {
        euclid_norm(&self.state).max(euclid_norm(&self.memory))
    }
}

type DriftFn = dyn Fn(&[f64], f64, &[f64], &mut [f64]) + Send + Sync;

/// Drift given by a closure with a declared Lipschitz constant.
#[derive(Clone)]
pub struct FnDrift {
    d: usize,
    k: usize,
    lipschitz: f64,
    f: Arc<DriftFn>,
}

impl FnDrift {
    pub fn new(
        d: usize,
        k: usize,
        lipschitz: f64,
        f: impl Fn(&[f64], f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        Self { d, k, lipschitz, f: Arc::new(f) }
    }
}

impl fmt::Debug for FnDrift {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnDrift")
            .field("d", &self.d)
            .field("k", &self.k)
            .field("lipschitz", &self.lipschitz)
            .finish_non_exhaustive()
    }
}

impl Drift for FnDrift {
    fn state_dim(&self) -> usize {
        self.d
    }

    fn memory_dim(&self) -> usize {
        self.k
    }

    fn eval(&self, x: &[f64], u: f64, a: &[f64], out: &mut [f64]) {
        (self.f)(x, u, a, out)
    }

    fn lipschitz(&self) -> f64 {
        self.lipschitz
    }
}

/// A drift together with the finite control set `K` (scalar control points).
#[derive(Debug, Clone)]
pub struct Dynamics {
    drift: Arc<dyn Drift>,
    controls: Vec<f64>,
}

impl Dynamics {
    pub fn new(drift: Arc<dyn Drift>, controls: Vec<f64>) -> Result<Self> {
        if controls.is_empty() {
            return Err(Error::invalid("controls", "the control set must not be empty"));
        }
        if controls.iter().any(|u| !u.is_finite()) {
            return Err(Error::invalid("controls", "non-finite control value"));
        }
        Ok(Self { drift, controls })
    }

    /// Same drift with a single control point `0`.
    pub fn uncontrolled(drift: Arc<dyn Drift>) -> Self {
        Self { drift, controls: vec![0.0] }
    }

    pub fn with_controls(&self, controls: Vec<f64>) -> Result<Self> {
        Self::new(self.drift.clone(), controls)
    }

    pub fn drift(&self) -> &Arc<dyn Drift> {
        &self.drift
    }

    pub fn controls(&self) -> &[f64] {
        &self.controls
    }

    pub fn state_dim(&self) -> usize {
        self.drift.state_dim()
    }

    pub fn memory_dim(&self) -> usize {
        self.drift.memory_dim()
    }

    pub fn lipschitz(&self) -> f64 {
        self.drift.lipschitz()
    }

    pub fn eval(&self, x: &[f64], control: usize, a: &[f64], out: &mut [f64]) {
        self.drift.eval(x, self.controls[control], a, out)
    }

    /// `max_u |F(0, u, 0)|`.
    pub fn drift_at_origin(&self) -> f64 {
        let x = vec![0.0; self.state_dim()];
        let a = vec![0.0; self.memory_dim()];
        let mut out = vec![0.0; self.state_dim()];
        self.controls
            .iter()
            .map(|&u| {
                self.drift.eval(&x, u, &a, &mut out);
                euclid_norm(&out)
            })
            .fold(0.0, f64::max)
    }

    /// Largest `|F(x,u,a) - F(y,u,b)| - C1 (|x - y| + |a - b|)` over random
    /// samples in the box `[-radius, radius]`; non-positive when the declared
    /// constant holds on the samples.
    pub fn lipschitz_violation(&self, samples: usize, radius: f64, seed: u64) -> f64 {
        let (d, k) = (self.state_dim(), self.memory_dim());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-radius..=radius)).collect() };
        let (mut f1, mut f2) = (vec![0.0; d], vec![0.0; d]);
        let mut worst = f64::NEG_INFINITY;
        for i in 0..samples {
            let (x, y, a, b) = (draw(d), draw(d), draw(k), draw(k));
            let u = i % self.controls.len();
            self.eval(&x, u, &a, &mut f1);
            self.eval(&y, u, &b, &mut f2);
            let gap = euclid_dist(&f1, &f2) - self.lipschitz() * (euclid_dist(&x, &y) + euclid_dist(&a, &b));
            worst = worst.max(gap);
        }
        worst
    }
}

/// Piecewise-constant control: `indices[i]` (into the control set) on `[t_i, t_{i+1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlLaw {
    breakpoints: Vec<f64>,
    indices: Vec<usize>,
}

impl ControlLaw {
    pub fn new(breakpoints: Vec<f64>, indices: Vec<usize>) -> Result<Self> {
        if indices.is_empty() || breakpoints.len() != indices.len() + 1 {
            return Err(Error::invalid(
                "control.breakpoints",
                format!("{} breakpoints for {} values", breakpoints.len(), indices.len()),
            ));
        }
        if breakpoints[0] != 0.0 || breakpoints.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid(
                "control.breakpoints",
                "must start at 0 and increase strictly",
            ));
        }
        Ok(Self { breakpoints, indices })
    }

    pub fn constant(index: usize, horizon: f64) -> Result<Self> {
        Self::new(vec![0.0, horizon], vec![index])
    }

    /// Equal-length intervals over `[0, horizon]`.
    pub fn uniform(horizon: f64, indices: Vec<usize>) -> Result<Self> {
        let m = indices.len();
        let breakpoints = (0..=m).map(|i| horizon * i as f64 / m.max(1) as f64).collect();
        Self::new(breakpoints, indices)
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn horizon(&self) -> f64 {
        *self.breakpoints.last().unwrap_or(&0.0)
    }

    /// Control index active at `t`; the last value is held past the horizon.
    pub fn index_at(&self, t: f64) -> usize {
        let pos = self.breakpoints[1..].partition_point(|&b| b <= t);
        self.indices[pos.min(self.indices.len() - 1)]
    }

    fn validate(&self, controls: usize, horizon: f64, h: f64) -> Result<()> {
        if let Some(&bad) = self.indices.iter().find(|&&i| i >= controls) {
            return Err(Error::invalid(
                "control.indices",
                format!("index {bad} outside the control set of size {controls}"),
            ));
        }
        if self.horizon() < horizon - 1e-9 * horizon.max(1.0) {
            return Err(Error::invalid(
                "control.breakpoints",
                format!("law ends at {} before the horizon {horizon}", self.horizon()),
            ));
        }
        for &b in &self.breakpoints {
            if b <= horizon && ((b / h) - (b / h).round()).abs() > 1e-8 {
                return Err(Error::invalid(
                    "control.breakpoints",
                    format!("breakpoint {b} is not on the step grid h = {h}"),
                ));
            }
        }
        Ok(())
    }
}

/// Computed solution on `[0, T]` together with its memory channel.
#[derive(Debug, Clone)]
pub struct Trajectory {
    h: f64,
    horizon: f64,
    d: usize,
    k: usize,
    states: Vec<f64>,
    memory: Vec<f64>,
    controls: Vec<usize>,
    values: Vec<f64>,
    history: HistoryState,
    law: ControlLaw,
}

impl Trajectory {
    pub fn step(&self) -> f64 {
        self.h
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn state_dim(&self) -> usize {
        self.d
    }

    pub fn memory_dim(&self) -> usize {
        self.k
    }

    /// Number of time nodes (`T / h + 1`).
    pub fn len(&self) -> usize {
        self.states.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.h
    }

    pub fn state(&self, n: usize) -> &[f64] {
        &self.states[n * self.d..(n + 1) * self.d]
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    pub fn final_state(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    /// Memory `G(t_n)`.
    pub fn memory(&self, n: usize) -> &[f64] {
        &self.memory[n * self.k..(n + 1) * self.k]
    }

    /// Control index used on step `n -> n + 1`.
    pub fn step_control(&self, n: usize) -> usize {
        self.controls[n]
    }

    /// Control value used on step `n -> n + 1`.
    pub fn step_value(&self, n: usize) -> f64 {
        self.values[n]
    }

    /// Control index reported at node `n` (that of the step starting there, the last step at `T`).
    pub fn node_control(&self, n: usize) -> usize {
        self.controls[n.min(self.controls.len() - 1)]
    }

    pub fn history(&self) -> &HistoryState {
        &self.history
    }

    pub fn law(&self) -> &ControlLaw {
        &self.law
    }

    /// Linear interpolation of `y` at `t` in `[0, T]`.
    pub fn state_at(&self, t: f64, out: &mut [f64]) {
        let pos = (t / self.h).clamp(0.0, (self.len() - 1) as f64);
        let j = (pos.floor() as usize).min(self.len() - 2);
        let theta = pos - j as f64;
        let (a, b) = (self.state(j), self.state(j + 1));
        for c in 0..self.d {
            out[c] = a[c] + theta * (b[c] - a[c]);
        }
    }

    /// CSV with columns `t, y_1.., G_1.., u_index`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.d).map(|i| format!("y_{i}")));
        header.extend((1..=self.k).map(|i| format!("G_{i}")));
        header.push("u_index".into());
        w.write_record(&header)?;
        for n in 0..self.len() {
            let mut row = vec![self.time(n).to_string()];
            row.extend(self.state(n).iter().map(f64::to_string));
            row.extend(self.memory(n).iter().map(f64::to_string));
            row.push(self.node_control(n).to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// How the memory term is coupled into the time stepper.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MemoryMode {
    /// Exact auxiliary ODE channel for exponential kernels, quadrature otherwise.
    #[default]
    Auto,
    /// Always evaluate the memory integral by trapezoid quadrature.
    Quadrature,
}

fn check_problem(dyn_: &Dynamics, kernel: &Kernel, alpha: &HistoryState, law: &ControlLaw, horizon: f64, h: f64) -> Result<usize> {
    let d = dyn_.state_dim();
    if kernel.state_dim() != d || kernel.memory_dim() != dyn_.memory_dim() {
        return Err(Error::DimensionMismatch {
            name: "kernel",
            expected: d * dyn_.memory_dim(),
            found: kernel.state_dim() * kernel.memory_dim(),
        });
    }
    if alpha.dim() != d {
        return Err(Error::DimensionMismatch { name: "history", expected: d, found: alpha.dim() });
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid("h", format!("must be positive, got {h}")));
    }
    let nodes = GridFn::node_count(h, horizon)?;
    law.validate(dyn_.controls().len(), horizon, h)?;
    Ok(nodes - 1)
}

fn step_controls(law: &ControlLaw, steps: usize, h: f64) -> Vec<usize> {
    (0..steps).map(|n| law.index_at((n as f64 + 0.5) * h)).collect()
}

/// RK4 solution of the state equation on `[0, T]` with step `h`.
pub fn solve_cauchy(dyn_: &Dynamics, kernel: &Kernel, alpha: &HistoryState, law: &ControlLaw, horizon: f64, h: f64) -> Result<Trajectory> {
    solve_cauchy_with(dyn_, kernel, alpha, law, horizon, h, MemoryMode::Auto)
}

pub fn solve_cauchy_with(
    dyn_: &Dynamics,
    kernel: &Kernel,
    alpha: &HistoryState,
    law: &ControlLaw,
    horizon: f64,
    h: f64,
    mode: MemoryMode,
) -> Result<Trajectory> {
    let steps = check_problem(dyn_, kernel, alpha, law, horizon, h)?;
    let controls = step_controls(law, steps, h);
    let (states, memory) = match (mode, kernel.exp_terms()) {
        (MemoryMode::Auto, Some(_)) => rk4_exponential(dyn_, kernel, alpha, &controls, h)?,
        _ => rk4_quadrature(dyn_, kernel, alpha, &controls, h)?,
    };
    Ok(Trajectory {
        h,
        horizon: steps as f64 * h,
        d: dyn_.state_dim(),
        k: dyn_.memory_dim(),
        states,
        memory,
        values: controls.iter().map(|&i| dyn_.controls()[i]).collect(),
        controls,
        history: alpha.clone(),
        law: law.clone(),
    })
}

/// Augmented system `(y, m_1, .., m_J)` with `m_i' = y - rate_i m_i` and `G = sum_i M_i m_i`.
fn rk4_exponential(dyn_: &Dynamics, kernel: &Kernel, alpha: &HistoryState, controls: &[usize], h: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let terms = kernel.exp_terms().unwrap_or_default();
    let (d, k) = (dyn_.state_dim(), dyn_.memory_dim());
    let width = d * (1 + terms.len());
    let mut state = alpha.x.clone();
    for t in terms {
        state.extend(kernel::moment(&alpha.z, t.rate)?);
    }
    let steps = controls.len();
    let mut states = Vec::with_capacity((steps + 1) * d);
    let mut memory = Vec::with_capacity((steps + 1) * k);
    let mut g = vec![0.0; k];

    let channel = |s: &[f64], g: &mut [f64]| {
        g.iter_mut().for_each(|v| *v = 0.0);
        for (i, t) in terms.iter().enumerate() {
            kernel::mat_vec_acc(&t.coeff, k, d, &s[d * (i + 1)..d * (i + 2)], 1.0, g);
        }
    };
    let rhs = |s: &[f64], u: usize, g: &mut [f64], out: &mut [f64]| {
        channel(s, g);
        dyn_.eval(&s[..d], u, g, &mut out[..d]);
        for (i, t) in terms.iter().enumerate() {
            for c in 0..d {
                out[d * (i + 1) + c] = s[c] - t.rate * s[d * (i + 1) + c];
            }
        }
    };

    channel(&state, &mut g);
    states.extend_from_slice(&state[..d]);
    memory.extend_from_slice(&g);
    let mut ks = vec![vec![0.0; width]; 4];
    let mut tmp = vec![0.0; width];
    for (n, &u) in controls.iter().enumerate() {
        rhs(&state, u, &mut g, &mut ks[0]);
        for (stage, c) in [(1usize, 0.5), (2, 0.5), (3, 1.0)] {
            for i in 0..width {
                tmp[i] = state[i] + c * h * ks[stage - 1][i];
            }
            let (done, rest) = ks.split_at_mut(stage);
            let _ = done;
            rhs(&tmp, u, &mut g, &mut rest[0]);
        }
        for i in 0..width {
            state[i] += h / 6.0 * (ks[0][i] + 2.0 * ks[1][i] + 2.0 * ks[2][i] + ks[3][i]);
        }
        if state.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp { time: (n + 1) as f64 * h });
        }
        channel(&state, &mut g);
        states.extend_from_slice(&state[..d]);
        memory.extend_from_slice(&g);
    }
    Ok((states, memory))
}

/// RK4 where each stage evaluates the memory by trapezoid quadrature over the
/// computed nodes plus the stage value, and over the initial history.
fn rk4_quadrature(dyn_: &Dynamics, kernel: &Kernel, alpha: &HistoryState, controls: &[usize], h: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let (d, k) = (dyn_.state_dim(), dyn_.memory_dim());
    let steps = controls.len();
    let half = 0.5 * h;
    let table = kernel.table(half, 2 * steps + 3);
    let mut hist = vec![0.0; (2 * steps + 1) * k];
    for (i, chunk) in hist.chunks_mut(k).enumerate() {
        kernel::history_memory_into(kernel, &alpha.z, i as f64 * half, chunk);
    }
    let hist_at = |i: usize| &hist[i * k..(i + 1) * k];

    let mut states = Vec::with_capacity((steps + 1) * d);
    states.extend_from_slice(&alpha.x);
    let mut memory = Vec::with_capacity((steps + 1) * k);
    memory.extend_from_slice(hist_at(0));

    // Memory at t_n + c h without the stage-value term: the first cell
    // [0, c h] contributes (c h / 2)(A(0) Y + A(c h) y_n), the remaining
    // cells sit at s = c h + j h against y_{n-j}.
    let base = |states: &[f64], n: usize, offset: usize, out: &mut [f64]| {
        out.copy_from_slice(hist_at(2 * n + offset));
        let y = |j: usize| &states[j * d..(j + 1) * d];
        if offset == 0 {
            for j in 0..=n {
                if n == 0 {
                    break;
                }
                let w = if j == 0 || j == n { half } else { h };
                table.apply(2 * j, y(n - j), w, out);
            }
        } else {
            let ch = offset as f64 * half;
            table.apply(offset, y(n), 0.5 * ch, out);
            for j in 0..=n {
                if n == 0 {
                    break;
                }
                let w = if j == 0 || j == n { half } else { h };
                table.apply(offset + 2 * j, y(n - j), w, out);
            }
        }
    };

    let mut g = vec![0.0; k];
    let mut gb = vec![0.0; k];
    let mut ks = vec![vec![0.0; d]; 4];
    let mut tmp = vec![0.0; d];
    let mut y = alpha.x.clone();
    for (n, &u) in controls.iter().enumerate() {
        base(&states, n, 0, &mut g);
        dyn_.eval(&y, u, &g, &mut ks[0]);
        for (stage, offset) in [(1usize, 1usize), (2, 1), (3, 2)] {
            let c = offset as f64 * 0.5;
            for i in 0..d {
                tmp[i] = y[i] + c * h * ks[stage - 1][i];
            }
            base(&states, n, offset, &mut gb);
            g.copy_from_slice(&gb);
            table.apply(0, &tmp, 0.5 * c * h, &mut g);
            let (_, rest) = ks.split_at_mut(stage);
            dyn_.eval(&tmp, u, &g, &mut rest[0]);
        }
        for i in 0..d {
            y[i] += h / 6.0 * (ks[0][i] + 2.0 * ks[1][i] + 2.0 * ks[2][i] + ks[3][i]);
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp { time: (n + 1) as f64 * h });
        }
        states.extend_from_slice(&y);
        base(&states, n + 1, 0, &mut g);
        memory.extend_from_slice(&g);
    }
    Ok((states, memory))
}

/// `||y||_theta = max_n e^{-theta t_n} |y_n|` on the time grid.
pub fn weighted_sup_norm(nodes: &[f64], d: usize, h: f64, theta: f64) -> f64 {
    nodes
        .chunks(d)
        .enumerate()
        .map(|(n, y)| (-theta * n as f64 * h).exp() * euclid_norm(y))
        .fold(0.0, f64::max)
}

/// Contraction factor `C (1/theta + 1/(sqrt(2) theta^{3/2}))` of the integral map in `E_theta`.
pub fn picard_contraction_bound(constant: f64, theta: f64) -> f64 {
    constant * (1.0 / theta + 1.0 / (std::f64::consts::SQRT_2 * theta.powf(1.5)))
}

/// `C = C1 max(1, ||A||_{L^2})`, the constant of the contraction estimate.
pub fn picard_constant(dyn_: &Dynamics, kernel: &Kernel) -> f64 {
    dyn_.lipschitz() * kernel.norms().l2.max(1.0)
}

#[derive(Debug, Clone)]
pub struct PicardResult {
    pub trajectory: Trajectory,
    /// `||y_{n+1} - y_n||_theta` per iteration.
    pub distances: Vec<f64>,
    /// Ratios of successive distances above the rounding floor.
    pub ratios: Vec<f64>,
    pub theta: f64,
    /// `C (1/theta + 1/(sqrt(2) theta^{3/2}))` at `theta`.
    pub bound: f64,
}

/// Fixed point of the grid integral map
/// `y_{n+1} = y_n + h/2 (F(y_n, u_n, G_n) + F(y_{n+1}, u_n, G_{n+1}))`
/// by Picard iteration from `y = x`, with `G_n` by trapezoid quadrature.
pub fn picard_solve(
    dyn_: &Dynamics,
    kernel: &Kernel,
    alpha: &HistoryState,
    law: &ControlLaw,
    horizon: f64,
    h: f64,
    theta: f64,
    max_iter: usize,
) -> Result<PicardResult> {
    let steps = check_problem(dyn_, kernel, alpha, law, horizon, h)?;
    if !(theta > 0.0 && theta.is_finite()) {
        return Err(Error::invalid("theta", format!("must be positive, got {theta}")));
    }
    let controls = step_controls(law, steps, h);
    let (d, k) = (dyn_.state_dim(), dyn_.memory_dim());
    let table = kernel.table(h, steps + 1);
    let mut hist = vec![0.0; (steps + 1) * k];
    for (n, chunk) in hist.chunks_mut(k).enumerate() {
        kernel::history_memory_into(kernel, &alpha.z, n as f64 * h, chunk);
    }

    let memory_of = |y: &[f64]| -> Vec<f64> {
        let mut g = hist.clone();
        for n in 1..=steps {
            let out = &mut g[n * k..(n + 1) * k];
            for j in 0..=n {
                let w = if j == 0 || j == n { 0.5 * h } else { h };
                table.apply(j, &y[(n - j) * d..(n - j + 1) * d], w, out);
            }
        }
        g
    };

    let mut y: Vec<f64> = alpha.x.iter().copied().cycle().take((steps + 1) * d).collect();
    let scale = weighted_sup_norm(&y, d, h, theta).max(1.0);
    let mut distances = Vec::new();
    let mut ratios = Vec::new();
    let mut streak = 0;
    let (mut f0, mut f1) = (vec![0.0; d], vec![0.0; d]);
    loop {
        let g = memory_of(&y);
        let mut next = Vec::with_capacity(y.len());
        next.extend_from_slice(&alpha.x);
        for n in 0..steps {
            let u = controls[n];
            dyn_.eval(&y[n * d..(n + 1) * d], u, &g[n * k..(n + 1) * k], &mut f0);
            dyn_.eval(&y[(n + 1) * d..(n + 2) * d], u, &g[(n + 1) * k..(n + 2) * k], &mut f1);
            for c in 0..d {
                let prev = next[n * d + c];
                next.push(prev + 0.5 * h * (f0[c] + f1[c]));
            }
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonContraction { ratios });
        }
        let diff: Vec<f64> = next.iter().zip(&y).map(|(a, b)| a - b).collect();
        let dist = weighted_sup_norm(&diff, d, h, theta);
        if let Some(&prev) = distances.last() {
            if prev > 1e-12 * scale {
                let r: f64 = dist / prev;
                ratios.push(r);
                streak = if r >= 1.0 { streak + 1 } else { 0 };
                if streak >= 3 {
                    return Err(Error::NonContraction { ratios });
                }
            }
        }
        distances.push(dist);
        y = next;
        if dist <= 1e-14 * scale {
            break;
        }
        if distances.len() >= max_iter {
            return Err(Error::NoConvergence { iterations: distances.len(), last: dist, residuals: distances });
        }
    }
    let memory = memory_of(&y);
    let constant = picard_constant(dyn_, kernel);
    Ok(PicardResult {
        trajectory: Trajectory {
            h,
            horizon: steps as f64 * h,
            d,
            k,
            states: y,
            memory,
            values: controls.iter().map(|&i| dyn_.controls()[i]).collect(),
            controls,
            history: alpha.clone(),
            law: law.clone(),
        },
        distances,
        ratios,
        theta,
        bound: picard_contraction_bound(constant, theta),
    })
}

/// The state `(y(t), y(t - .))` reached at time `t`, resampled on the grid
/// of the initial history.
pub fn shift_history(traj: &Trajectory, t: f64) -> Result<HistoryState> {
    if !(0.0..=traj.horizon() + 1e-12).contains(&t) {
        return Err(Error::invalid("t", format!("{t} outside [0, {}]", traj.horizon())));
    }
    let pos = t / traj.step();
    if (pos - pos.round()).abs() > 1e-8 {
        return Err(Error::invalid("t", format!("{t} is not on the step grid")));
    }
    let n = pos.round() as usize;
    if n == 0 {
        return Ok(traj.history().clone());
    }
    let t = n as f64 * traj.step();
    let z0 = &traj.history().z;
    let d = traj.state_dim();
    let z = GridFn::from_fn(z0.step(), z0.horizon(), d, z0.tail(), |s, out| {
        if s <= t {
            traj.state_at(t - s, out);
        } else {
            z0.value_at(s - t, out);
        }
    })?;
    HistoryState::new(traj.state(n).to_vec(), z)
}

/// `sup_t e^{-theta t} |y_1(t) - y_0(t)| / (|x_1 - x_0| + ||z_1 - z_0||)`,
/// zero when the two initial states coincide.
pub fn continuity_ratio(
    dyn_: &Dynamics,
    kernel: &Kernel,
    alpha0: &HistoryState,
    alpha1: &HistoryState,
    law: &ControlLaw,
    horizon: f64,
    h: f64,
    theta: f64,
) -> Result<f64> {
    let denom = alpha0.distance(alpha1)?;
    if denom == 0.0 {
        return Ok(0.0);
    }
    let y0 = solve_cauchy(dyn_, kernel, alpha0, law, horizon, h)?;
    let y1 = solve_cauchy(dyn_, kernel, alpha1, law, horizon, h)?;
    let diff: Vec<f64> = y1.states().iter().zip(y0.states()).map(|(a, b)| a - b).collect();
    Ok(weighted_sup_norm(&diff, dyn_.state_dim(), h, theta) / denom)
}

/// `sup_t |y_n(t) - y(t)|` where `y_n` starts from the past `z + sin(n s)`.
pub fn weak_continuity_probe(
    dyn_: &Dynamics,
    kernel: &Kernel,
    alpha: &HistoryState,
    frequency: f64,
    law: &ControlLaw,
    horizon: f64,
    h: f64,
) -> Result<f64> {
    let z = &alpha.z;
    let mut data = z.data().to_vec();
    for (j, chunk) in data.chunks_mut(z.dim()).enumerate() {
        let bump = (frequency * j as f64 * z.step()).sin();
        chunk.iter_mut().for_each(|v| *v += bump);
    }
    let perturbed = HistoryState::new(alpha.x.clone(), GridFn::new(z.step(), z.dim(), data, z.tail())?)?;
    let y = solve_cauchy(dyn_, kernel, alpha, law, horizon, h)?;
    let yn = solve_cauchy(dyn_, kernel, &perturbed, law, horizon, h)?;
    Ok((0..y.len()).map(|n| euclid_dist(y.state(n), yn.state(n))).fold(0.0, f64::max))
}

/// `theta_hat = C1 (1 + ||A||_{L^1} + ||A||_{L^2}) + 1`, an overestimate of the growth rate.
pub fn growth_estimate(dyn_: &Dynamics, kernel: &Kernel) -> f64 {
    let n = kernel.norms();
    dyn_.lipschitz() * (1.0 + n.l1 + n.l2) + 1.0
}
