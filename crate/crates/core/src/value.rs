//! Discounted costs, value estimates over finite control families, the
//! dynamic programming residual and the Hamiltonian.

use std::cmp::Ordering;
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{self, ControlLaw, Dynamics, Trajectory};
use crate::error::{Error, Result};
use crate::hilbert;
use crate::kernel::{self, euclid_dist, euclid_norm, HistoryState, Kernel};

/// Running cost `L(x, u)`.
pub trait RunningCost: Send + Sync + fmt::Debug {
    fn eval(&self, x: &[f64], u: f64) -> f64;
    /// `sup |L(x, u)|` over all `x` and the given control points.
    fn sup_bound(&self, controls: &[f64]) -> f64;
    /// Declared `C2` with `|L(x, u) - L(y, u)| <= C2 |x - y|`.
    fn lipschitz(&self) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantCost(pub f64);

impl RunningCost for ConstantCost {
    fn eval(&self, _x: &[f64], _u: f64) -> f64 {
        self.0
    }

    fn sup_bound(&self, _controls: &[f64]) -> f64 {
        self.0.abs()
    }

    fn lipschitz(&self) -> f64 {
        0.0
    }
}

/// `L(x, u) = min(q |x|^2, cap) + r u^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClampedQuadratic {
    pub q: f64,
    pub r: f64,
    pub cap: f64,
}

impl RunningCost for ClampedQuadratic {
    fn eval(&self, x: &[f64], u: f64) -> f64 {
        (self.q * x.iter().map(|v| v * v).sum::<f64>()).min(self.cap) + self.r * u * u
    }

    fn sup_bound(&self, controls: &[f64]) -> f64 {
        let umax = controls.iter().fold(0.0_f64, |m, u| m.max(u * u));
        self.cap.abs() + self.r.abs() * umax
    }

    fn lipschitz(&self) -> f64 {
        2.0 * (self.q.abs() * self.cap.abs()).sqrt()
    }
}

/// `L(x, u) = min(weight |x|, cap)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaturatedNorm {
    pub weight: f64,
    pub cap: f64,
}

impl RunningCost for SaturatedNorm {
    fn eval(&self, x: &[f64], _u: f64) -> f64 {
        (self.weight * euclid_norm(x)).min(self.cap)
    }

    fn sup_bound(&self, _controls: &[f64]) -> f64 {
        self.cap.abs()
    }

    fn lipschitz(&self) -> f64 {
        self.weight.abs()
    }
}

/// Running cost with its discount rate `lambda > 0`.
#[derive(Debug, Clone)]
pub struct CostModel {
    running: Arc<dyn RunningCost>,
    discount: f64,
}

impl CostModel {
    pub fn new(running: Arc<dyn RunningCost>, discount: f64) -> Result<Self> {
        if !(discount > 0.0 && discount.is_finite()) {
            return Err(Error::invalid("lambda", format!("discount rate must be positive, got {discount}")));
        }
        Ok(Self { running, discount })
    }

    pub fn running(&self) -> &Arc<dyn RunningCost> {
        &self.running
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn eval(&self, x: &[f64], u: f64) -> f64 {
        self.running.eval(x, u)
    }

    pub fn sup_bound(&self, controls: &[f64]) -> f64 {
        self.running.sup_bound(controls)
    }

    pub fn lipschitz(&self) -> f64 {
        self.running.lipschitz()
    }

    /// `||L||_inf e^{-lambda T} / lambda`.
    pub fn tail_bound(&self, controls: &[f64], horizon: f64) -> f64 {
        self.sup_bound(controls) * (-self.discount * horizon).exp() / self.discount
    }

    /// Smallest multiple of `h` with `tail_bound <= tol`.
    pub fn truncation_horizon(&self, controls: &[f64], tol: f64, h: f64) -> f64 {
        let sup = self.sup_bound(controls);
        let lam = self.discount;
        let t = if sup == 0.0 { h } else { ((sup / (lam * tol)).ln() / lam).max(h) };
        (t / h).ceil() * h
    }
}

/// Cost integral over `[0, T]` and the bound on what lies beyond.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiscountedCost {
    pub value: f64,
    pub tail_bound: f64,
}

/// `int_0^T e^{-lambda s} L(y(s), u(s)) ds`, taking `L` linear on each step
/// (with that step's control at both ends) and integrating the discount
/// factor exactly.
pub fn discounted_cost(traj: &Trajectory, cost: &CostModel, horizon: f64, controls: &[f64]) -> Result<DiscountedCost> {
    let h = traj.step();
    let steps = horizon / h;
    if (steps - steps.round()).abs() > 1e-8 || steps.round() as usize >= traj.len() || horizon < 0.0 {
        return Err(Error::invalid(
            "horizon",
            format!("{horizon} must be a grid time within [0, {}]", traj.horizon()),
        ));
    }
    let steps = steps.round() as usize;
    let value = segment_cost(traj, cost, 0, steps);
    Ok(DiscountedCost { value, tail_bound: cost.tail_bound(controls, horizon) })
}

/// Cost of steps `from..to`, discounted from time zero.
fn segment_cost(traj: &Trajectory, cost: &CostModel, from: usize, to: usize) -> f64 {
    let h = traj.step();
    let lam = cost.discount();
    let (i0, i1) = kernel::exp_linear_moments(lam, h);
    let (w_start, w_end) = (i0 - i1, i1);
    let q = (-lam * h).exp();
    let mut factor = (-lam * from as f64 * h).exp();
    let mut acc = 0.0;
    for n in from..to {
        let u = traj.step_value(n);
        acc += factor * (w_start * cost.eval(traj.state(n), u) + w_end * cost.eval(traj.state(n + 1), u));
        factor *= q;
    }
    acc
}

/// Piecewise-constant controls with `intervals` equal pieces on
/// `[0, control_horizon]` (snapped to the step grid), the last value held
/// up to the cost horizon. The control points are those of the dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ControlFamily {
    pub intervals: usize,
    pub control_horizon: Option<f64>,
}

impl ControlFamily {
    pub fn new(intervals: usize, control_horizon: Option<f64>) -> Self {
        Self { intervals, control_horizon }
    }

    fn breakpoints(&self, horizon: f64, h: f64) -> Result<Vec<f64>> {
        if self.intervals == 0 {
            return Err(Error::invalid("family.intervals", "need at least one interval"));
        }
        let tc = self.control_horizon.unwrap_or(horizon).min(horizon);
        let mut b: Vec<f64> = (0..self.intervals)
            .map(|i| (tc * i as f64 / self.intervals as f64 / h).round() * h)
            .collect();
        b.push(horizon);
        if b.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid(
                "family.intervals",
                format!("{} intervals do not fit on the step grid", self.intervals),
            ));
        }
        Ok(b)
    }

    /// `K^m` laws for control sets of size `k`.
    pub fn size(&self, k: usize) -> u128 {
        (k as u128).checked_pow(self.intervals as u32).unwrap_or(u128::MAX)
    }

    /// The law of lexicographic rank `rank` (first interval most significant).
    pub fn law(&self, rank: u128, k: usize, horizon: f64, h: f64) -> Result<ControlLaw> {
        let breakpoints = self.breakpoints(horizon, h)?;
        let mut indices = vec![0; self.intervals];
        let mut r = rank;
        for slot in indices.iter_mut().rev() {
            *slot = (r % k as u128) as usize;
            r /= k as u128;
        }
        ControlLaw::new(breakpoints, indices)
    }

    fn law_from(&self, indices: Vec<usize>, horizon: f64, h: f64) -> Result<ControlLaw> {
        ControlLaw::new(self.breakpoints(horizon, h)?, indices)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SearchMode {
    Exhaustive,
    /// Start from the best constant control, then sweep the intervals one at
    /// a time over all control values.
    CoordinateDescent { max_sweeps: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValueOptions {
    pub mode: SearchMode,
    pub parallel: bool,
    /// Largest family the exhaustive mode accepts.
    pub max_candidates: usize,
}

impl Default for ValueOptions {
    fn default() -> Self {
        Self { mode: SearchMode::Exhaustive, parallel: true, max_candidates: 1_000_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValueEstimate {
    pub value: f64,
    pub horizon: f64,
    pub tail_bound: f64,
    pub intervals: usize,
    pub control_count: usize,
    /// Control indices of the minimizing law.
    pub best: Vec<usize>,
    pub breakpoints: Vec<f64>,
    pub evaluations: usize,
    /// Best value after each optimizer stage.
    pub trace: Vec<f64>,
}

/// Everything needed to evaluate the cost of one control law.
#[derive(Debug, Clone, Copy)]
pub struct Problem<'a> {
    pub dynamics: &'a Dynamics,
    pub kernel: &'a Kernel,
    pub cost: &'a CostModel,
}

impl Problem<'_> {
    pub fn cost_of(&self, alpha: &HistoryState, law: &ControlLaw, horizon: f64, h: f64) -> Result<f64> {
        let traj = dynamics::solve_cauchy(self.dynamics, self.kernel, alpha, law, horizon, h)?;
        Ok(segment_cost(&traj, self.cost, 0, traj.len() - 1))
    }
}

fn better(a: (f64, u128), b: (f64, u128)) -> (f64, u128) {
    match a.0.total_cmp(&b.0) {
        Ordering::Less => a,
        Ordering::Greater => b,
        Ordering::Equal => {
            if a.1 <= b.1 {
                a
            } else {
                b
            }
        }
    }
}

/// Infimum of the discounted cost over the control family on `[0, T]`.
pub fn value_estimate(
    problem: Problem<'_>,
    alpha: &HistoryState,
    family: ControlFamily,
    horizon: f64,
    h: f64,
    options: ValueOptions,
) -> Result<ValueEstimate> {
    let k = problem.dynamics.controls().len();
    let controls = problem.dynamics.controls();
    let breakpoints = family.breakpoints(horizon, h)?;
    let eval = |rank: u128| -> Result<(f64, u128)> {
        let law = family.law(rank, k, horizon, h)?;
        Ok((problem.cost_of(alpha, &law, horizon, h)?, rank))
    };
    let (value, best, evaluations, trace) = match options.mode {
        SearchMode::Exhaustive => {
            let size = family.size(k);
            if size > options.max_candidates as u128 {
                return Err(Error::FamilyTooLarge { candidates: size, limit: options.max_candidates });
            }
            let identity = (f64::INFINITY, u128::MAX);
            let (value, rank) = if options.parallel {
                (0..size as u64)
                    .into_par_iter()
                    .map(|r| eval(r as u128))
                    .try_reduce(|| identity, |a, b| Ok(better(a, b)))?
            } else {
                let mut acc = identity;
                for r in 0..size {
                    acc = better(acc, eval(r)?);
                }
                acc
            };
            let law = family.law(rank, k, horizon, h)?;
            (value, law.indices().to_vec(), size as usize, vec![value])
        }
        SearchMode::CoordinateDescent { max_sweeps } => {
            let m = family.intervals;
            let cost_of = |idx: &[usize]| -> Result<f64> {
                let law = family.law_from(idx.to_vec(), horizon, h)?;
                problem.cost_of(alpha, &law, horizon, h)
            };
            let mut evaluations = 0;
            let mut best = vec![0; m];
            let mut value = f64::INFINITY;
            for u in 0..k {
                let c = cost_of(&vec![u; m])?;
                evaluations += 1;
                if c < value {
                    value = c;
                    best = vec![u; m];
                }
            }
            let mut trace = vec![value];
            for _ in 0..max_sweeps {
                let mut improved = false;
                for i in 0..m {
                    for u in 0..k {
                        if u == best[i] {
                            continue;
                        }
                        let mut trial = best.clone();
                        trial[i] = u;
                        let c = cost_of(&trial)?;
                        evaluations += 1;
                        if c < value {
                            value = c;
                            best = trial;
                            improved = true;
                        }
                    }
                }
                trace.push(value);
                if !improved {
                    break;
                }
            }
            (value, best, evaluations, trace)
        }
    };
    Ok(ValueEstimate {
        value,
        horizon,
        tail_bound: problem.cost.tail_bound(controls, horizon),
        intervals: family.intervals,
        control_count: k,
        best,
        breakpoints,
        evaluations,
        trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DppResidual {
    pub residual: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub split: f64,
    /// Outer control indices attaining the right-hand side.
    pub outer_best: Vec<usize>,
}

/// `|v(alpha) - min_u (int_0^t e^{-lambda s} L ds + e^{-lambda t} v(alpha_t))|`.
///
/// The left side is the value over `family` on `[0, T]`. On the right the
/// outer law ranges over `outer_intervals` equal pieces of `[0, t]`, and the
/// value at the shifted state uses `family` on `[0, T - t]`.
pub fn dpp_residual(
    problem: Problem<'_>,
    alpha: &HistoryState,
    split: f64,
    family: ControlFamily,
    outer_intervals: usize,
    horizon: f64,
    h: f64,
    options: ValueOptions,
) -> Result<DppResidual> {
    if !(split > 0.0 && split < horizon) {
        return Err(Error::invalid("split", format!("must lie in (0, {horizon}), got {split}")));
    }
    let steps = split / h;
    if (steps - steps.round()).abs() > 1e-8 {
        return Err(Error::invalid("split", format!("{split} is not on the step grid")));
    }
    let split = steps.round() * h;
    let lhs = value_estimate(problem, alpha, family, horizon, h, options)?.value;
    let k = problem.dynamics.controls().len();
    let outer = ControlFamily::new(outer_intervals, None);
    let inner_opts = ValueOptions { parallel: options.parallel && outer.size(k) < 4, ..options };
    let rest = horizon - split;
    let eval = |rank: u128| -> Result<(f64, u128)> {
        let law = outer.law(rank, k, split, h)?;
        let traj = dynamics::solve_cauchy(problem.dynamics, problem.kernel, alpha, &law, split, h)?;
        let seg = segment_cost(&traj, problem.cost, 0, traj.len() - 1);
        let shifted = dynamics::shift_history(&traj, split)?;
        let inner = value_estimate(problem, &shifted, family, rest, h, inner_opts)?;
        Ok((seg + (-problem.cost.discount() * split).exp() * inner.value, rank))
    };
    let size = outer.size(k);
    if size > options.max_candidates as u128 {
        return Err(Error::FamilyTooLarge { candidates: size, limit: options.max_candidates });
    }
    let identity = (f64::INFINITY, u128::MAX);
    let (rhs, rank) = if options.parallel {
        (0..size as u64)
            .into_par_iter()
            .map(|r| eval(r as u128))
            .try_reduce(|| identity, |a, b| Ok(better(a, b)))?
    } else {
        let mut acc = identity;
        for r in 0..size {
            acc = better(acc, eval(r)?);
        }
        acc
    };
    Ok(DppResidual {
        residual: (lhs - rhs).abs(),
        lhs,
        rhs,
        split,
        outer_best: outer.law(rank, k, split, h)?.indices().to_vec(),
    })
}

/// `H(x, z, p) = max_u { -L(x, u) - p . F(x, u, int A z) }`, the first
/// control winning ties.
pub fn hamiltonian(cost: &CostModel, dyn_: &Dynamics, kernel: &Kernel, alpha: &HistoryState, p: &[f64]) -> Result<f64> {
    let a = kernel::history_memory(kernel, &alpha.z, 0.0)?;
    if p.len() != dyn_.state_dim() {
        return Err(Error::DimensionMismatch { name: "p", expected: dyn_.state_dim(), found: p.len() });
    }
    Ok(hamiltonian_with_memory(cost, dyn_, &alpha.x, &a, p))
}

pub(crate) fn hamiltonian_with_memory(cost: &CostModel, dyn_: &Dynamics, x: &[f64], a: &[f64], p: &[f64]) -> f64 {
    let mut f = vec![0.0; dyn_.state_dim()];
    let mut best = f64::NEG_INFINITY;
    for (i, &u) in dyn_.controls().iter().enumerate() {
        dyn_.eval(x, i, a, &mut f);
        let v = -cost.eval(x, u) - p.iter().zip(&f).map(|(pi, fi)| pi * fi).sum::<f64>();
        if v > best {
            best = v;
        }
    }
    best
}

/// One sample for the regularity bounds: two states and two co-states.
#[derive(Debug, Clone)]
pub struct RegularitySample {
    pub a: HistoryState,
    pub b: HistoryState,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

/// Constants of the three regularity bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegularityConstants {
    /// `C2 + C1 max(1, ||A||_{L^2})`.
    pub state: f64,
    /// `max(|F(0, u, 0)|, C1 max(1, ||A||_{L^2}))`.
    pub costate: f64,
    /// `C2 + C1 max(1, ||A||_{H^1})`, absent without a derivative norm.
    pub dual: Option<f64>,
}

impl RegularityConstants {
    pub fn new(cost: &CostModel, dyn_: &Dynamics, kernel: &Kernel) -> Self {
        let norms = kernel.norms();
        let c1 = dyn_.lipschitz();
        let c2 = cost.lipschitz();
        Self {
            state: c2 + c1 * norms.l2.max(1.0),
            costate: dyn_.drift_at_origin().max(c1 * norms.l2.max(1.0)),
            dual: norms.h1().map(|h1| c2 + c1 * h1.max(1.0)),
        }
    }
}

/// Largest `LHS - C * RHS` of each bound over the samples (non-positive
/// when the bounds hold):
///
/// 1. `|H(a, p) - H(b, p)| <= C (|x_a - x_b| + ||z_a - z_b||) (1 + |p|)`
/// 2. `|H(a, p) - H(a, q)| <= C |p - q| (1 + |x_a| + ||z_a||)`
/// 3. as 1 with the `(H^1)'` norm of `z_a - z_b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegularityGaps {
    pub state: f64,
    pub costate: f64,
    pub dual: Option<f64>,
    pub constants: RegularityConstants,
    pub samples: usize,
}

pub fn hamiltonian_regularity_gap(
    cost: &CostModel,
    dyn_: &Dynamics,
    kernel: &Kernel,
    samples: &[RegularitySample],
) -> Result<RegularityGaps> {
    let constants = RegularityConstants::new(cost, dyn_, kernel);
    let mut gaps = (f64::NEG_INFINITY, f64::NEG_INFINITY, constants.dual.map(|_| f64::NEG_INFINITY));
    for s in samples {
        let ga = kernel::history_memory(kernel, &s.a.z, 0.0)?;
        let gb = kernel::history_memory(kernel, &s.b.z, 0.0)?;
        let ha_p = hamiltonian_with_memory(cost, dyn_, &s.a.x, &ga, &s.p);
        let hb_p = hamiltonian_with_memory(cost, dyn_, &s.b.x, &gb, &s.p);
        let ha_q = hamiltonian_with_memory(cost, dyn_, &s.a.x, &ga, &s.q);
        let dz = s.a.z.combine(1.0, &s.b.z, -1.0)?;
        let dx = euclid_dist(&s.a.x, &s.b.x);
        let weight_p = 1.0 + euclid_norm(&s.p);
        let lhs1 = (ha_p - hb_p).abs();
        gaps.0 = gaps.0.max(lhs1 - constants.state * (dx + dz.l2_norm()) * weight_p);
        let rhs2 = euclid_dist(&s.p, &s.q) * (1.0 + euclid_norm(&s.a.x) + s.a.z.l2_norm());
        gaps.1 = gaps.1.max((ha_p - ha_q).abs() - constants.costate * rhs2);
        if let (Some(c), Some(g)) = (constants.dual, gaps.2.as_mut()) {
            let dual = hilbert::dual_h1_norm(&dz)?;
            *g = g.max(lhs1 - c * (dx + dual) * weight_p);
        }
    }
    Ok(RegularityGaps { state: gaps.0, costate: gaps.1, dual: gaps.2, constants, samples: samples.len() })
}

/// Least-squares slope of `ln y` against `ln x` over pairs with both positive.
pub fn log_log_slope(points: &[(f64, f64)]) -> Option<f64> {
    let logs: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if logs.len() < 2 {
        return None;
    }
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Exponent `min(1, lambda / theta)` of the value's modulus of continuity.
pub fn predicted_holder_exponent(lambda: f64, theta: f64) -> f64 {
    (lambda / theta).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::AffineDrift;
    use crate::grid::Tail;
    use approx::assert_relative_eq;

    fn dyn_(s: f64, b: f64, m: f64, controls: Vec<f64>) -> Dynamics {
        Dynamics::new(Arc::new(AffineDrift::scalar(s, b, m, 0.0)), controls).unwrap()
    }

    fn quad(cap: f64, r: f64) -> CostModel {
        CostModel::new(Arc::new(ClampedQuadratic { q: 1.0, r, cap }), 1.0).unwrap()
    }

    fn start(x: f64) -> HistoryState {
        HistoryState::with_zero_past(vec![x], 1e-2, 5.0).unwrap()
    }

    #[test]
    fn constant_cost_integrates_exactly() {
        let dy = dyn_(-1.0, 0.0, 0.0, vec![0.0]);
        let k = Kernel::exponential(1.0, 1.0).unwrap();
        let cost = CostModel::new(Arc::new(ConstantCost(1.0)), 1.0).unwrap();
        let t = cost.truncation_horizon(&[0.0], 1e-8, 1e-2);
        let law = ControlLaw::constant(0, t).unwrap();
        let tr = dynamics::solve_cauchy(&dy, &k, &start(1.0), &law, t, 1e-2).unwrap();
        let c = discounted_cost(&tr, &cost, t, &[0.0]).unwrap();
        assert_relative_eq!(c.value + c.tail_bound, 1.0, epsilon = 1e-12);
        assert!(c.tail_bound <= 1e-8);
    }

    #[test]
    fn quadratic_cost_of_decay() {
        let dy = dyn_(-1.0, 0.0, 0.0, vec![0.0]);
        let k = Kernel::exponential(1.0, 1.0).unwrap();
        let cost = quad(100.0, 0.0);
        let law = ControlLaw::constant(0, 30.0).unwrap();
        let tr = dynamics::solve_cauchy(&dy, &k, &start(1.0), &law, 30.0, 1e-3).unwrap();
        let c = discounted_cost(&tr, &cost, 30.0, &[0.0]).unwrap();
        assert_relative_eq!(c.value, 1.0 / 3.0, epsilon = 1e-6);
        let zero = CostModel::new(Arc::new(ConstantCost(0.0)), 1.0).unwrap();
        assert_eq!(discounted_cost(&tr, &zero, 30.0, &[0.0]).unwrap().value, 0.0);
    }

    #[test]
    fn value_of_staying_at_rest() {
        let dy = dyn_(0.0, 1.0, 0.0, vec![-1.0, 0.0, 1.0]);
        let k = Kernel::exponential(1.0, 1.0).unwrap();
        let cost = quad(10.0, 0.0);
        let alpha = HistoryState::scalar(0.0, 1e-2, 5.0, Tail::Zero, |s| (3.0 * s).sin()).unwrap();
        let p = Problem { dynamics: &dy, kernel: &k, cost: &cost };
        let est = value_estimate(p, &alpha, ControlFamily::new(2, Some(2.0)), 10.0, 1e-2, ValueOptions::default()).unwrap();
        assert_eq!(est.value, 0.0);
        assert_eq!(est.best, vec![1, 1]);
        assert_eq!(est.evaluations, 9);
    }

    #[test]
    fn serial_and_parallel_agree() {
        let dy = dyn_(0.0, 1.0, 1.0, vec![-1.0, 0.0, 1.0]);
        let k = Kernel::exponential(1.0, 1.0).unwrap();
        let cost = quad(4.0, 0.1);
        let p = Problem { dynamics: &dy, kernel: &k, cost: &cost };
        let fam = ControlFamily::new(3, Some(1.5));
        let par = value_estimate(p, &start(1.0), fam, 5.0, 1e-2, ValueOptions::default()).unwrap();
        let ser = value_estimate(p, &start(1.0), fam, 5.0, 1e-2, ValueOptions { parallel: false, ..Default::default() }).unwrap();
        assert_eq!(par, ser);
        let cd = value_estimate(
            p,
            &start(1.0),
            fam,
            5.0,
            1e-2,
            ValueOptions { mode: SearchMode::CoordinateDescent { max_sweeps: 5 }, ..Default::default() },
        )
        .unwrap();
        assert!(cd.value >= par.value);
        assert!(cd.value <= cd.trace[0]);
    }

    #[test]
    fn exhaustive_refuses_large_families() {
        let dy = dyn_(0.0, 1.0, 0.0, vec![-1.0, 0.0, 1.0]);
        let k = Kernel::exponential(1.0, 1.0).unwrap();
        let cost = quad(4.0, 0.0);
        let p = Problem { dynamics: &dy, kernel: &k, cost: &cost };
        let opts = ValueOptions { max_candidates: 10, ..Default::default() };
        let err = value_estimate(p, &start(0.0), ControlFamily::new(3, None), 1.0, 1e-2, opts).unwrap_err();
        assert_eq!(err, Error::FamilyTooLarge { candidates: 27, limit: 10 });
    }

    #[test]
    fn dpp_is_exact_for_constant_cost() {
        let dy = dyn_(0.0, 1.0, 1.0, vec![-1.0, 1.0]);
        let k = Kernel::exponential(1.0, 1.0).unwrap();
        let cost = CostModel::new(Arc::new(ConstantCost(1.0)), 1.0).unwrap();
        let p = Problem { dynamics: &dy, kernel: &k, cost: &cost };
        let r = dpp_residual(p, &start(0.5), 0.5, ControlFamily::new(1, None), 1, 5.0, 1e-2, ValueOptions::default()).unwrap();
        assert!(r.residual <= 1e-12, "{r:?}");
    }

    #[test]
    fn hamiltonian_examples() {
        let k = Kernel::exponential(1.0, 1.0).unwrap();
        let zero_cost = CostModel::new(Arc::new(ConstantCost(0.0)), 1.0).unwrap();
        let dy = dyn_(0.0, 1.0, 0.0, vec![-1.0, 1.0]);
        let alpha = HistoryState::scalar(0.3, 1e-3, 30.0, Tail::Zero, |s| (-s).exp()).unwrap();
        for p in [-2.0, 0.0, 0.7] {
            assert_relative_eq!(hamiltonian(&zero_cost, &dy, &k, &alpha, &[p]).unwrap(), f64::abs(p));
        }
        let with_memory = dyn_(0.0, 1.0, 1.0, vec![-1.0, 1.0]);
        for p in [-2.0, 0.7] {
            let h = hamiltonian(&zero_cost, &with_memory, &k, &alpha, &[p]).unwrap();
            assert_relative_eq!(h, p.abs() - p / 2.0, epsilon = 1e-6);
        }
        let cost = quad(4.0, 1.0);
        let h = hamiltonian(&cost, &with_memory, &k, &alpha, &[0.0]).unwrap();
        assert_relative_eq!(h, -(0.09 + 1.0));
    }

    #[test]
    fn slope_fit() {
        let pts: Vec<(f64, f64)> = [1e-3, 1e-2, 1e-1].iter().map(|&d: &f64| (d, 3.0 * d.powf(0.6))).collect();
        assert_relative_eq!(log_log_slope(&pts).unwrap(), 0.6, epsilon = 1e-12);
        assert_eq!(log_log_slope(&[(1.0, 1.0)]), None);
        assert_eq!(predicted_holder_exponent(1.0, 4.0), 0.25);
        assert_eq!(predicted_holder_exponent(8.0, 4.0), 1.0);
    }
}
