//! Exponential-kernel reduction to a two-dimensional HJB equation.
//!
//! With `A(s) = e^{-delta s}` and `d = k = 1` the value depends on the past
//! only through the moment `y(z) = int_0^inf e^{-delta s} z(s) ds`, which
//! moves with `y' = x - delta y`. The reduced value `w(x, y)` solves
//!
//! ```text
//! lambda w + H_0(x, y, w_x) - w_y (x - delta y) = 0,
//! H_0(x, y, p) = max_u { -L(x, u) - p F(x, u, y) }
//! ```
//!
//! and is computed here by a semi-Lagrangian value iteration.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::Dynamics;
use crate::error::{Error, Result};
use crate::kernel::{self, HistoryState, Kernel};
use crate::value::{self, ControlFamily, CostModel, Problem, ValueOptions};

/// `y' = x - delta y`, the drift of the moment along trajectories.
pub fn reduced_drift(x: f64, y: f64, delta: f64) -> f64 {
    x - delta * y
}

/// `y(z) = int_0^inf e^{-delta s} z(s) ds` for a scalar past.
pub fn moment(z: &crate::grid::GridFn, delta: f64) -> Result<f64> {
    Ok(kernel::moment(z, delta)?.iter().sum())
}

#[derive(Debug, Clone)]
pub struct ReducedProblem {
    pub delta: f64,
    /// Scalar dynamics `F(x, u, y)`, the memory channel being the moment.
    pub dynamics: Dynamics,
    pub cost: CostModel,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub nx: usize,
    pub ny: usize,
}

impl ReducedProblem {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::invalid("delta", format!("must be positive, got {}", self.delta)));
        }
        if self.dynamics.state_dim() != 1 || self.dynamics.memory_dim() != 1 {
            return Err(Error::invalid("dynamics", "the reduced problem is scalar (d = k = 1)"));
        }
        if self.nx < 3 || self.ny < 3 {
            return Err(Error::invalid("grid", format!("need at least 3x3 nodes, got {}x{}", self.nx, self.ny)));
        }
        for (name, (lo, hi)) in [("x_range", self.x_range), ("y_range", self.y_range)] {
            if !(lo < hi && lo.is_finite() && hi.is_finite()) {
                return Err(Error::invalid(name, format!("empty or infinite range [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    fn dx(&self) -> f64 {
        (self.x_range.1 - self.x_range.0) / (self.nx - 1) as f64
    }

    fn dy(&self) -> f64 {
        (self.y_range.1 - self.y_range.0) / (self.ny - 1) as f64
    }

    fn node(&self, i: usize, j: usize) -> (f64, f64) {
        (self.x_range.0 + i as f64 * self.dx(), self.y_range.0 + j as f64 * self.dy())
    }

    /// `H_0(x, y, p)`.
    pub fn hamiltonian(&self, x: f64, y: f64, p: f64) -> f64 {
        value::hamiltonian_with_memory(&self.cost, &self.dynamics, &[x], &[y], &[p])
    }
}

/// Reduced value on the grid, `values[i * ny + j] = w(x_i, y_j)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReducedValueGrid {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub nx: usize,
    pub ny: usize,
    pub values: Vec<f64>,
    pub iterations: usize,
    pub last_update: f64,
    /// Sup-norm update of every sweep.
    pub updates: Vec<f64>,
    pub dt: f64,
}

/// Cell and bilinear weights of a point clamped to the box.
#[derive(Debug, Clone, Copy)]
struct Stencil {
    base: usize,
    wx: f64,
    wy: f64,
}

fn locate(v: f64, lo: f64, step: f64, n: usize) -> (usize, f64) {
    let pos = ((v - lo) / step).clamp(0.0, (n - 1) as f64);
    let i = (pos.floor() as usize).min(n - 2);
    (i, pos - i as f64)
}

impl ReducedValueGrid {
    pub fn dx(&self) -> f64 {
        (self.x_range.1 - self.x_range.0) / (self.nx - 1) as f64
    }

    pub fn dy(&self) -> f64 {
        (self.y_range.1 - self.y_range.0) / (self.ny - 1) as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x_range.0 + i as f64 * self.dx()
    }

    pub fn y(&self, j: usize) -> f64 {
        self.y_range.0 + j as f64 * self.dy()
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.ny + j]
    }

    fn stencil(&self, x: f64, y: f64) -> Stencil {
        let (i, wx) = locate(x, self.x_range.0, self.dx(), self.nx);
        let (j, wy) = locate(y, self.y_range.0, self.dy(), self.ny);
        Stencil { base: i * self.ny + j, wx, wy }
    }

    fn interp(values: &[f64], ny: usize, s: Stencil) -> f64 {
        let (a, b) = (values[s.base], values[s.base + 1]);
        let (c, d) = (values[s.base + ny], values[s.base + ny + 1]);
        (1.0 - s.wx) * ((1.0 - s.wy) * a + s.wy * b) + s.wx * ((1.0 - s.wy) * c + s.wy * d)
    }

    /// Bilinear value at `(x, y)`, which must lie in the box.
    pub fn value_at(&self, x: f64, y: f64) -> Result<f64> {
        let eps = 1e-12;
        let inside = |v: f64, (lo, hi): (f64, f64)| v >= lo - eps * (hi - lo) && v <= hi + eps * (hi - lo);
        if !(inside(x, self.x_range) && inside(y, self.y_range)) {
            return Err(Error::OutsideDomain { x, y });
        }
        Ok(Self::interp(&self.values, self.ny, self.stencil(x, y)))
    }

    /// CSV with columns `x, y, w`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["x", "y", "w"])?;
        for i in 0..self.nx {
            for j in 0..self.ny {
                out.write_record([self.x(i).to_string(), self.y(j).to_string(), self.at(i, j).to_string()])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Value iteration of
/// `w <- min_u { (1 - e^{-lambda dt}) / lambda * L(x, u) + e^{-lambda dt} w(foot) }`
/// with foot `(x + dt F(x, u, y), y + dt (x - delta y))` clamped to the box
/// and bilinear interpolation, starting from `w = 0`.
pub fn solve_reduced_hjb(prob: &ReducedProblem, dt: f64, tol: f64, max_iter: usize) -> Result<ReducedValueGrid> {
    prob.validate()?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::invalid("dt", format!("must be positive, got {dt}")));
    }
    if !(tol > 0.0) {
        return Err(Error::invalid("tol", format!("must be positive, got {tol}")));
    }
    let lam = prob.cost.discount();
    let q = (-lam * dt).exp();
    let weight = -(-lam * dt).exp_m1() / lam;
    let (nx, ny) = (prob.nx, prob.ny);
    let controls = prob.dynamics.controls();
    let k = controls.len();

    let mut grid = ReducedValueGrid {
        x_range: prob.x_range,
        y_range: prob.y_range,
        nx,
        ny,
        values: vec![0.0; nx * ny],
        iterations: 0,
        last_update: f64::INFINITY,
        updates: Vec::new(),
        dt,
    };

    // Per node and control: running cost term and foot stencil.
    let mut terms = Vec::with_capacity(nx * ny * k);
    let mut f = [0.0];
    for i in 0..nx {
        for j in 0..ny {
            let (x, y) = prob.node(i, j);
            for (c, &u) in controls.iter().enumerate() {
                prob.dynamics.eval(&[x], c, &[y], &mut f);
                let foot = grid.stencil(x + dt * f[0], y + dt * reduced_drift(x, y, prob.delta));
                terms.push((weight * prob.cost.eval(&[x], u), foot));
            }
        }
    }

    let mut next = vec![0.0; nx * ny];
    while grid.iterations < max_iter {
        let old = &grid.values;
        next.par_chunks_mut(ny).enumerate().for_each(|(i, row)| {
            for (j, out) in row.iter_mut().enumerate() {
                let base = (i * ny + j) * k;
                let mut best = f64::INFINITY;
                for &(cost, foot) in &terms[base..base + k] {
                    let v = cost + q * ReducedValueGrid::interp(old, ny, foot);
                    if v < best {
                        best = v;
                    }
                }
                *out = best;
            }
        });
        let update = next.iter().zip(old).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        std::mem::swap(&mut grid.values, &mut next);
        grid.iterations += 1;
        grid.last_update = update;
        grid.updates.push(update);
        if !update.is_finite() {
            break;
        }
        if update <= tol {
            return Ok(grid);
        }
    }
    Err(Error::NoConvergence { iterations: grid.iterations, last: grid.last_update, residuals: grid.updates })
}

/// Sup over interior nodes of `|lambda w + H_0(x, y, w_x) - w_y (x - delta y)|`
/// with centered differences.
pub fn reduced_pde_residual(grid: &ReducedValueGrid, prob: &ReducedProblem) -> f64 {
    residual_map(grid, prob).into_iter().fold(0.0, |m, (_, _, r)| m.max(r.abs()))
}

/// Residual at every interior node as `(x, y, residual)`.
pub fn residual_map(grid: &ReducedValueGrid, prob: &ReducedProblem) -> Vec<(f64, f64, f64)> {
    let lam = prob.cost.discount();
    let (dx, dy) = (grid.dx(), grid.dy());
    let mut out = Vec::with_capacity(grid.nx * grid.ny);
    for i in 1..grid.nx - 1 {
        for j in 1..grid.ny - 1 {
            let (x, y) = (grid.x(i), grid.y(j));
            let wx = (grid.at(i + 1, j) - grid.at(i - 1, j)) / (2.0 * dx);
            let wy = (grid.at(i, j + 1) - grid.at(i, j - 1)) / (2.0 * dy);
            let r = lam * grid.at(i, j) + prob.hamiltonian(x, y, wx) - wy * reduced_drift(x, y, prob.delta);
            out.push((x, y, r));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CrossValidation {
    pub v_direct: f64,
    pub w_reduced: f64,
    pub gap: f64,
    pub moment: f64,
}

/// Compares the value estimate of the full problem with kernel
/// `e^{-delta s}` to the reduced value read at `(x, y(z))`.
pub fn cross_validate(
    dyn_: &Dynamics,
    cost: &CostModel,
    delta: f64,
    alpha: &HistoryState,
    grid: &ReducedValueGrid,
    family: ControlFamily,
    horizon: f64,
    h: f64,
    options: ValueOptions,
) -> Result<CrossValidation> {
    if dyn_.state_dim() != 1 || dyn_.memory_dim() != 1 {
        return Err(Error::invalid("dynamics", "the reduced problem is scalar (d = k = 1)"));
    }
    let y = moment(&alpha.z, delta)?;
    let w_reduced = grid.value_at(alpha.x[0], y)?;
    let kernel = Kernel::exponential(delta, 1.0)?;
    let problem = Problem { dynamics: dyn_, kernel: &kernel, cost };
    let v_direct = value::value_estimate(problem, alpha, family, horizon, h, options)?.value;
    Ok(CrossValidation { v_direct, w_reduced, gap: (v_direct - w_reduced).abs(), moment: y })
}
