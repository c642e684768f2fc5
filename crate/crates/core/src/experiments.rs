//! The six experiment kinds behind `memctl run`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, ExperimentKind, Search, Solver};
use crate::dynamics::{self, ControlLaw, Dynamics, MemoryMode};
use crate::hilbert;
use crate::kernel::{HistoryState, Kernel};
use crate::library::Preset;
use crate::reduced::{self, ReducedProblem};
use crate::sampling;
use crate::value::{self, ControlFamily, CostModel, Problem, SearchMode, ValueOptions};
use crate::Result;

/// One invariant attached to an experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub limit: f64,
    pub pass: bool,
}

impl Check {
    fn at_most(name: &str, value: f64, limit: f64) -> Self {
        Self { name: name.into(), value, limit, pass: value <= limit }
    }

    fn at_least(name: &str, value: f64, limit: f64) -> Self {
        Self { name: name.into(), value, limit, pass: value >= limit }
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub kind: ExperimentKind,
    pub csv: Vec<u8>,
    pub results: Value,
    pub checks: Vec<Check>,
}

impl Outcome {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    /// Echoed inputs, key scalars and check verdicts.
    pub fn summary(&self, config: &ExperimentConfig, seed: u64) -> Value {
        json!({
            "kind": self.kind.name(),
            "seed": seed,
            "config": config,
            "results": self.results,
            "checks": self.checks,
            "pass": self.pass(),
        })
    }
}

struct Setup {
    preset: Preset,
    dynamics: Dynamics,
    kernel: Kernel,
    cost: CostModel,
    alpha: HistoryState,
    horizon: f64,
    h: f64,
}

impl Setup {
    fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let preset = cfg
            .resolved_problem()
            .map_err(|e| crate::Error::invalid("problem", e.to_string()))?;
        let dynamics = preset.dynamics()?;
        let kernel = preset.kernel()?;
        let cost = preset.cost_model()?;
        let h = cfg.discretization.h;
        let horizon = match cfg.discretization.horizon {
            Some(t) => t,
            None => cost.truncation_horizon(dynamics.controls(), cfg.discretization.truncation_tol, h),
        };
        Ok(Self { alpha: cfg.initial_state()?, preset, dynamics, kernel, cost, horizon, h })
    }

    fn problem(&self) -> Problem<'_> {
        Problem { dynamics: &self.dynamics, kernel: &self.kernel, cost: &self.cost }
    }
}

fn csv_rows(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner().map_err(|e| crate::Error::Io { message: e.to_string() })
}

fn non_increasing(name: &str, seq: &[f64], slack: f64) -> Check {
    let worst = seq.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    let worst = if worst.is_finite() { worst } else { 0.0 };
    Check::at_most(name, worst, slack)
}

/// Runs `cfg` with `seed` for its sampled checks; `log` receives progress lines.
pub fn run(cfg: &ExperimentConfig, seed: u64, log: &mut dyn FnMut(String)) -> Result<Outcome> {
    let setup = Setup::new(cfg)?;
    log(format!(
        "{}: preset {}, lambda {}, T {}, h {}",
        cfg.kind.name(),
        setup.preset.name,
        setup.preset.lambda,
        setup.horizon,
        setup.h
    ));
    match cfg.kind {
        ExperimentKind::Simulate => simulate(cfg, &setup, seed),
        ExperimentKind::Value => value_levels(cfg, &setup, log),
        ExperimentKind::Dpp => dpp(cfg, &setup, log),
        ExperimentKind::Bop => bop(cfg, &setup, seed),
        ExperimentKind::Hjb2d => hjb2d(cfg, &setup, log),
        ExperimentKind::Xval => xval(cfg, &setup, log),
    }
}

fn simulate(cfg: &ExperimentConfig, s: &Setup, seed: u64) -> Result<Outcome> {
    let sc = cfg.simulate.clone().unwrap_or_else(|| unreachable!("validated"));
    let law = ControlLaw::uniform(s.horizon, sc.control.clone())?;
    let mut checks = vec![Check::at_most(
        "lipschitz_violation",
        s.dynamics.lipschitz_violation(sc.lipschitz_samples, 2.0, seed).max(0.0),
        1e-12,
    )];
    let mut results = serde_json::Map::new();
    let traj = match sc.solver {
        Solver::Rk4 => dynamics::solve_cauchy(&s.dynamics, &s.kernel, &s.alpha, &law, s.horizon, s.h)?,
        Solver::Quadrature => {
            dynamics::solve_cauchy_with(&s.dynamics, &s.kernel, &s.alpha, &law, s.horizon, s.h, MemoryMode::Quadrature)?
        }
        Solver::Picard => {
            let c = dynamics::picard_constant(&s.dynamics, &s.kernel);
            let theta = sc.theta.unwrap_or(2.0 * c + 1.0);
            let p = dynamics::picard_solve(&s.dynamics, &s.kernel, &s.alpha, &law, s.horizon, s.h, theta, sc.max_iter)?;
            let worst = p.ratios.iter().copied().fold(0.0, f64::max);
            checks.push(Check::at_most("picard_ratio", worst, p.bound));
            results.insert("theta".into(), json!(theta));
            results.insert("picard_iterations".into(), json!(p.distances.len()));
            results.insert("picard_bound".into(), json!(p.bound));
            p.trajectory
        }
    };
    let cost = value::discounted_cost(&traj, &s.cost, s.horizon, s.dynamics.controls())?;
    results.insert("horizon".into(), json!(s.horizon));
    results.insert("steps".into(), json!(traj.len() - 1));
    results.insert("final_state".into(), json!(traj.final_state()));
    results.insert("discounted_cost".into(), json!(cost.value));
    results.insert("tail_bound".into(), json!(cost.tail_bound));
    let mut csv = Vec::new();
    traj.write_csv(&mut csv)?;
    Ok(Outcome { kind: cfg.kind, csv, results: Value::Object(results), checks })
}

fn options(search: Search, max_sweeps: usize, max_candidates: usize) -> ValueOptions {
    ValueOptions {
        mode: match search {
            Search::Exhaustive => SearchMode::Exhaustive,
            Search::CoordinateDescent => SearchMode::CoordinateDescent { max_sweeps },
        },
        parallel: true,
        max_candidates,
    }
}

fn value_levels(cfg: &ExperimentConfig, s: &Setup, log: &mut dyn FnMut(String)) -> Result<Outcome> {
    let vc = cfg.value.clone().unwrap_or_else(|| unreachable!("validated"));
    let opts = options(vc.search, vc.max_sweeps, vc.max_candidates);
    let bound = s.cost.sup_bound(s.dynamics.controls()) / s.cost.discount();
    let k = s.dynamics.controls().len();
    let mut rows = Vec::new();
    let mut excess = f64::NEG_INFINITY;
    let mut values = Vec::new();
    for &m in &vc.intervals {
        let fam = ControlFamily::new(m, vc.control_horizon);
        let est = value::value_estimate(s.problem(), &s.alpha, fam, s.horizon, s.h, opts)?;
        log(format!("intervals {m}: value {:.12e} after {} evaluations", est.value, est.evaluations));
        excess = excess.max(est.value.abs() - bound - est.tail_bound);
        let best: Vec<String> = est.best.iter().map(usize::to_string).collect();
        rows.push(vec![
            m.to_string(),
            fam.size(k).to_string(),
            est.value.to_string(),
            est.tail_bound.to_string(),
            est.evaluations.to_string(),
            best.join(" "),
        ]);
        values.push(json!({ "intervals": m, "value": est.value, "tail_bound": est.tail_bound, "best": est.best }));
    }
    let csv = csv_rows(&["intervals", "candidates", "value", "tail_bound", "evaluations", "best"], rows)?;
    Ok(Outcome {
        kind: cfg.kind,
        csv,
        results: json!({ "horizon": s.horizon, "levels": values, "bound": bound }),
        checks: vec![Check::at_most("boundedness_excess", excess, 0.0)],
    })
}

fn dpp(cfg: &ExperimentConfig, s: &Setup, log: &mut dyn FnMut(String)) -> Result<Outcome> {
    let dc = cfg.dpp.clone().unwrap_or_else(|| unreachable!("validated"));
    let opts = ValueOptions::default();
    let mut rows = Vec::new();
    let mut residuals = Vec::new();
    let mut levels = Vec::new();
    for &m in &dc.intervals {
        let fam = ControlFamily::new(m, dc.control_horizon);
        let r = value::dpp_residual(s.problem(), &s.alpha, dc.split, fam, dc.outer_intervals, s.horizon, s.h, opts)?;
        log(format!("intervals {m}: residual {:.3e}", r.residual));
        rows.push(vec![m.to_string(), r.residual.to_string(), r.lhs.to_string(), r.rhs.to_string(), r.split.to_string()]);
        residuals.push(r.residual);
        levels.push(json!({ "intervals": m, "residual": r.residual, "lhs": r.lhs, "rhs": r.rhs, "outer_best": r.outer_best }));
    }
    let mut checks = vec![non_increasing("residual_monotone", &residuals, 1e-9)];
    if let Some(tol) = dc.tolerance {
        checks.push(Check::at_most("final_residual", *residuals.last().unwrap_or(&0.0), tol));
    }
    let csv = csv_rows(&["intervals", "residual", "lhs", "rhs", "split"], rows)?;
    Ok(Outcome {
        kind: cfg.kind,
        csv,
        results: json!({ "horizon": s.horizon, "residual": residuals.last(), "levels": levels }),
        checks,
    })
}

fn bop(cfg: &ExperimentConfig, s: &Setup, seed: u64) -> Result<Outcome> {
    let samples = cfg.bop.clone().unwrap_or_default().samples;
    let report = hilbert::operator_report(&s.alpha)?;
    let b = hilbert::apply_b(&s.alpha)?;
    let mut route_gap = report.b_norm.relative_gap();
    let mut tb_min = report.tb;
    let mut contraction = report.b_image_norm - report.b_norm.direct.max(0.0).sqrt();
    let mut lower = f64::INFINITY;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..samples {
        let a = sampling::smooth_state(&mut rng, 1, cfg.h_z(), cfg.discretization.s_max, false)?;
        let r = hilbert::operator_report(&a)?;
        route_gap = route_gap.max(r.b_norm.relative_gap());
        tb_min = tb_min.min(r.tb);
        contraction = contraction.max(r.b_image_norm - r.b_norm.direct.max(0.0).sqrt());
        let base = a.x[0] * a.x[0] + r.dual_h1 * r.dual_h1;
        if base > 0.0 {
            lower = lower.min(r.b_norm.direct / base);
        }
    }
    let mut csv = Vec::new();
    b.write_csv(&s.alpha.z, &mut csv)?;
    Ok(Outcome {
        kind: cfg.kind,
        csv,
        results: json!({
            "report": report,
            "samples": samples,
            "lower_bound_constant": if lower.is_finite() { Some(lower) } else { None },
        }),
        checks: vec![
            Check::at_most("b_norm_route_gap", route_gap, 1e-7),
            Check::at_least("tb_nonnegative", tb_min, -1e-9),
            Check::at_most("b_contraction_excess", contraction, 1e-9),
        ],
    })
}

fn reduced_problem(s: &Setup, x: [f64; 2], y: [f64; 2], nx: usize, ny: usize) -> Result<ReducedProblem> {
    let delta = s
        .preset
        .kernel
        .unit_exponential_rate()
        .ok_or_else(|| crate::Error::invalid("kernel", "the reduced problem needs e^{-delta s}"))?;
    Ok(ReducedProblem {
        delta,
        dynamics: s.dynamics.clone(),
        cost: s.cost.clone(),
        x_range: (x[0], x[1]),
        y_range: (y[0], y[1]),
        nx,
        ny,
    })
}

/// Largest `u_{n+1} / u_n` over sweeps whose update is above rounding.
fn worst_update_ratio(updates: &[f64]) -> f64 {
    updates
        .windows(2)
        .filter(|w| w[0] > 1e-13)
        .map(|w| w[1] / w[0])
        .fold(0.0, f64::max)
}

fn hjb2d(cfg: &ExperimentConfig, s: &Setup, log: &mut dyn FnMut(String)) -> Result<Outcome> {
    let g = cfg.hjb2d.clone().unwrap_or_else(|| unreachable!("validated"));
    let prob = reduced_problem(s, g.x_range, g.y_range, g.nx, g.ny)?;
    let grid = reduced::solve_reduced_hjb(&prob, g.dt, g.tol, g.max_iter)?;
    log(format!("converged in {} sweeps", grid.iterations));
    let residual = reduced::reduced_pde_residual(&grid, &prob);
    let q = (-s.cost.discount() * g.dt).exp();
    let ratio = worst_update_ratio(&grid.updates);
    let mut csv = Vec::new();
    grid.write_csv(&mut csv)?;
    Ok(Outcome {
        kind: cfg.kind,
        csv,
        results: json!({
            "delta": prob.delta,
            "iterations": grid.iterations,
            "last_update": grid.last_update,
            "pde_residual": residual,
            "contraction_factor": q,
            "worst_update_ratio": ratio,
        }),
        checks: vec![Check::at_most("update_ratio", ratio, q + 1e-12)],
    })
}

fn xval(cfg: &ExperimentConfig, s: &Setup, log: &mut dyn FnMut(String)) -> Result<Outcome> {
    let xc = cfg.xval.clone().unwrap_or_else(|| unreachable!("validated"));
    let mut rows = Vec::new();
    let mut gaps = Vec::new();
    let mut levels = Vec::new();
    for l in &xc.levels {
        let prob = reduced_problem(s, xc.x_range, xc.y_range, l.n, l.n)?;
        let grid = reduced::solve_reduced_hjb(&prob, l.dt, xc.tol, xc.max_iter)?;
        let fam = ControlFamily::new(l.intervals, xc.control_horizon);
        let cv = reduced::cross_validate(
            &s.dynamics,
            &s.cost,
            prob.delta,
            &s.alpha,
            &grid,
            fam,
            s.horizon,
            s.h,
            ValueOptions::default(),
        )?;
        log(format!("intervals {}, n {}, dt {}: gap {:.3e}", l.intervals, l.n, l.dt, cv.gap));
        rows.push(vec![
            l.intervals.to_string(),
            l.n.to_string(),
            l.dt.to_string(),
            s.alpha.x[0].to_string(),
            cv.moment.to_string(),
            cv.v_direct.to_string(),
            cv.w_reduced.to_string(),
            cv.gap.to_string(),
        ]);
        gaps.push(cv.gap);
        levels.push(json!({ "level": l, "cross_validation": cv }));
    }
    let mut checks = vec![non_increasing("gap_monotone", &gaps, 0.0)];
    if let Some(tol) = xc.tolerance {
        checks.push(Check::at_most("final_gap", *gaps.last().unwrap_or(&0.0), tol));
    }
    let csv = csv_rows(&["intervals", "n", "dt", "x", "y", "v_direct", "w_reduced", "gap"], rows)?;
    Ok(Outcome {
        kind: cfg.kind,
        csv,
        results: json!({ "horizon": s.horizon, "levels": levels }),
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_text(text: &str) -> Outcome {
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        run(&cfg, 0, &mut |_| {}).unwrap()
    }

    #[test]
    fn zero_drift_simulation_has_constant_rows() {
        let out = run_text(
            r#"
kind = "simulate"
[problem]
preset = "constant-cost"
[discretization]
h = 0.1
horizon = 1.0
[initial]
x = 0.25
[simulate]
"#,
        );
        assert!(out.pass());
        let text = String::from_utf8(out.csv).unwrap();
        let rows: Vec<&str> = text.lines().skip(1).collect();
        assert_eq!(rows.len(), 11);
        for r in rows {
            let cols: Vec<&str> = r.split(',').collect();
            assert_eq!(cols[1], "0.25");
        }
    }

    #[test]
    fn dpp_for_constant_cost_is_exact() {
        let out = run_text(
            r#"
kind = "dpp"
[problem]
preset = "constant-cost"
[discretization]
h = 0.01
[dpp]
split = 0.5
intervals = [1]
tolerance = 1e-9
"#,
        );
        assert!(out.pass(), "{:?}", out.checks);
        assert!(out.results["residual"].as_f64().unwrap() <= 1e-9);
    }

    #[test]
    fn hjb2d_contracts() {
        let out = run_text(
            r#"
kind = "hjb2d"
[problem]
preset = "uncontrolled-lq"
[discretization]
h = 0.01
[hjb2d]
x_range = [-2.0, 2.0]
y_range = [-2.0, 2.0]
nx = 21
ny = 21
dt = 0.05
"#,
        );
        assert!(out.pass(), "{:?}", out.checks);
    }

    #[test]
    fn bop_on_exponential_past() {
        let out = run_text(
            r#"
kind = "bop"
[problem]
preset = "constant-cost"
[discretization]
h = 0.01
h_z = 0.001
[initial]
x = 1.0
past = { kind = "matched", rate = 1.0 }
[bop]
samples = 5
"#,
        );
        assert!(out.pass(), "{:?}", out.checks);
        let direct = out.results["report"]["b_norm"]["direct"].as_f64().unwrap();
        assert!((direct - 31.0 / 24.0).abs() < 1e-4, "{direct}");
    }

    #[test]
    fn worst_ratio_skips_rounding_floor() {
        assert_eq!(worst_update_ratio(&[1.0, 0.5, 0.25, 1e-14, 2e-14]), 0.5);
    }
}
