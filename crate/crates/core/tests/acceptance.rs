//! Acceptance criteria, one PASS/FAIL line each. Exits non-zero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::Instant;

use memctl::dynamics::{self, AffineDrift, ControlLaw, Dynamics};
use memctl::grid::Tail;
use memctl::hilbert;
use memctl::kernel::{HistoryState, Kernel};
use memctl::library::preset;
use memctl::reduced::{self, ReducedProblem, ReducedValueGrid};
use memctl::sampling;
use memctl::value::{self, ControlFamily, CostModel, Problem, RegularitySample, ValueOptions};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn exp_past(x: f64, h: f64, horizon: f64) -> HistoryState {
    HistoryState::scalar(x, h, horizon, Tail::ExponentialDecay(1.0), |s| (-s).exp()).unwrap()
}

fn solver_agreement() -> Verdict {
    let mut notes = Vec::new();
    let mut pass = true;
    for (name, control) in [("constant-cost", 0), ("uncontrolled-lq", 0), ("controlled-memory-lq", 2)] {
        let p = preset(name).unwrap();
        let (dy, k) = (p.dynamics().unwrap(), p.kernel().unwrap());
        let a = HistoryState::with_zero_past(vec![1.0], 1e-3, 20.0).unwrap();
        let law = ControlLaw::constant(control, 1.0).unwrap();
        let theta = 2.0 * dynamics::picard_constant(&dy, &k) + 1.0;
        let pic = dynamics::picard_solve(&dy, &k, &a, &law, 1.0, 1e-3, theta, 200).unwrap();
        let rk = dynamics::solve_cauchy(&dy, &k, &a, &law, 1.0, 1e-3).unwrap();
        let gap = pic.trajectory.states().iter().zip(rk.states()).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
        let worst = pic.ratios.iter().copied().fold(0.0, f64::max);
        pass &= gap <= 1e-6 && worst <= pic.bound;
        notes.push(format!("{name}: gap {gap:.2e}, ratio {worst:.3} <= {:.3}", pic.bound));
    }
    verdict(pass, notes.join("; "))
}

fn linear_memory_oracle() -> Verdict {
    // y' = m, m' = y - m with y(0) = 1, m(0) = 0.
    let disc = 5f64.sqrt();
    let (r1, r2) = ((-1.0 + disc) / 2.0, (-1.0 - disc) / 2.0);
    let (c1, c2) = (-r2 / (r1 - r2), r1 / (r1 - r2));
    let exact = c1 * r1.exp() + c2 * r2.exp();
    let dy = Dynamics::uncontrolled(Arc::new(AffineDrift::scalar(0.0, 0.0, 1.0, 0.0)));
    let k = Kernel::exponential(1.0, 1.0).unwrap();
    let a = HistoryState::with_zero_past(vec![1.0], 1e-2, 10.0).unwrap();
    let law = ControlLaw::constant(0, 1.0).unwrap();
    let got = *dynamics::solve_cauchy(&dy, &k, &a, &law, 1.0, 1e-3).unwrap().final_state().first().unwrap();
    let err = (got - exact).abs();
    verdict(err <= 1e-6, format!("y(1) = {got:.12}, eigen-solution {exact:.12}, error {err:.2e}"))
}

fn gronwall() -> Verdict {
    let dy = Dynamics::uncontrolled(Arc::new(AffineDrift::scalar(0.0, 0.0, 1.0, 0.0)));
    let k = Kernel::exponential(1.0, 1.0).unwrap();
    let theta = dynamics::growth_estimate(&dy, &k);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let base = HistoryState::with_zero_past(vec![1.0], 1e-2, 20.0).unwrap();
    let law = ControlLaw::constant(0, 5.0).unwrap();
    let mut ratios: Vec<f64> = (0..100)
        .map(|_| {
            let dx = sampling::gaussian(&mut rng, 1, 1.0);
            let dz = sampling::smooth_past(&mut rng, 1, 1e-2, 20.0, 3, 1.0, 3.0).unwrap();
            let a1 = HistoryState::new(vec![1.0 + dx[0]], base.z.combine(1.0, &dz, 1.0).unwrap()).unwrap();
            dynamics::continuity_ratio(&dy, &k, &base, &a1, &law, 5.0, 1e-2, theta).unwrap()
        })
        .collect();
    ratios.sort_by(f64::total_cmp);
    let (median, max) = (ratios[50], ratios[99]);
    let pass = ratios.iter().all(|r| r.is_finite()) && max <= 3.0 * median;
    verdict(pass, format!("theta {theta:.3}, median ratio {median:.3}, max {max:.3}"))
}

fn dpp() -> Verdict {
    let h = 1e-2;
    let mut notes = Vec::new();
    let mut pass = true;
    for name in ["constant-cost", "uncontrolled-lq"] {
        let p = preset(name).unwrap();
        let (dy, k, cost) = (p.dynamics().unwrap(), p.kernel().unwrap(), p.cost_model().unwrap());
        let t = cost.truncation_horizon(dy.controls(), 1e-8, h);
        let a = exp_past(1.0, 1e-2, 20.0);
        let prob = Problem { dynamics: &dy, kernel: &k, cost: &cost };
        let r = value::dpp_residual(prob, &a, 0.5, ControlFamily::new(1, None), 1, t, h, ValueOptions::default()).unwrap();
        pass &= r.residual <= 1e-9;
        notes.push(format!("{name} {:.1e}", r.residual));
    }
    let p = preset("controlled-memory-lq").unwrap();
    let (k, cost) = (p.kernel().unwrap(), p.cost_model().unwrap());
    let a = exp_past(1.0, 1e-2, 20.0);
    let mut residuals = Vec::new();
    for (m, controls) in [(2, vec![-1.0, 0.0, 1.0]), (4, vec![-1.0, -0.5, 0.0, 0.5, 1.0])] {
        let dy = p.dynamics().unwrap().with_controls(controls).unwrap();
        let t = cost.truncation_horizon(dy.controls(), 1e-8, h);
        let prob = Problem { dynamics: &dy, kernel: &k, cost: &cost };
        let r = value::dpp_residual(prob, &a, 0.5, ControlFamily::new(m, Some(2.0)), 1, t, h, ValueOptions::default()).unwrap();
        residuals.push(r.residual);
    }
    pass &= residuals[1] < residuals[0];
    notes.push(format!("controlled-memory-lq {:.3e} -> {:.3e}", residuals[0], residuals[1]));
    verdict(pass, notes.join("; "))
}

fn operator_identities() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut route, mut tb_min, mut excess) = (0.0f64, f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..1000 {
        let a = sampling::smooth_state(&mut rng, 1, 1e-3, 20.0, i % 2 == 0).unwrap();
        let r = hilbert::operator_report(&a).unwrap();
        route = route.max(r.b_norm.relative_gap());
        tb_min = tb_min.min(r.tb);
        excess = excess.max(r.b_image_norm - r.b_norm.direct.max(0.0).sqrt());
    }
    let unit = HistoryState::with_zero_past(vec![1.0], 1e-3, 40.0).unwrap();
    let e = exp_past(1.0, 1e-3, 40.0);
    let b0 = hilbert::b_norm_sq(&unit).unwrap();
    let b1 = hilbert::b_norm_sq(&e).unwrap();
    let t1 = hilbert::tb_form(&e).unwrap();
    let closed = (b0 - 2.0 / 3.0).abs().max((b1 - 31.0 / 24.0).abs()).max((t1 - 0.375).abs());
    let pass = route <= 1e-7 && tb_min >= -1e-9 && excess <= 1e-9 && closed <= 1e-5;
    verdict(
        pass,
        format!("route gap {route:.2e}, min <TBa,a> {tb_min:.2e}, contraction excess {excess:.2e}, closed forms {closed:.2e}"),
    )
}

fn bvp() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut points = vec![exp_past(1.0, 1e-3, 30.0)];
    points.extend((0..5).map(|_| sampling::smooth_state(&mut rng, 1, 1e-3, 30.0, false).unwrap()));
    let (mut interior, mut robin) = (0.0f64, 0.0f64);
    for a in &points {
        let b = hilbert::apply_b(a).unwrap();
        interior = interior.max(b.interior_residual(&a.z));
        robin = robin.max(b.robin_residual(&a.x));
    }
    let gap = |h: f64| {
        let a = HistoryState::scalar(0.3, h, 30.0, Tail::Zero, |s| (-s).exp() * (2.0 * s).cos()).unwrap();
        hilbert::apply_b(&a).unwrap().route_gap
    };
    let g: Vec<f64> = [2e-2, 1e-2, 5e-3].into_iter().map(gap).collect();
    let (o1, o2) = ((g[0] / g[1]).log2(), (g[1] / g[2]).log2());
    let pass = interior <= 1e-8 && robin <= 1e-8 && o1 >= 1.9 && o2 >= 1.9;
    verdict(pass, format!("interior {interior:.2e}, Robin {robin:.2e}, route orders {o1:.3}, {o2:.3}"))
}

fn hamiltonian_regularity() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut notes = Vec::new();
    let mut pass = true;
    for name in ["controlled-memory-lq", "bang-bang"] {
        let p = preset(name).unwrap();
        let (dy, k, cost) = (p.dynamics().unwrap(), p.kernel().unwrap(), p.cost_model().unwrap());
        let samples: Vec<RegularitySample> = (0..1000)
            .map(|_| RegularitySample {
                a: sampling::smooth_state(&mut rng, 1, 1e-2, 20.0, false).unwrap(),
                b: sampling::smooth_state(&mut rng, 1, 1e-2, 20.0, false).unwrap(),
                p: sampling::gaussian(&mut rng, 1, 2.0),
                q: sampling::gaussian(&mut rng, 1, 2.0),
            })
            .collect();
        let g = value::hamiltonian_regularity_gap(&cost, &dy, &k, &samples).unwrap();
        let dual = g.dual.unwrap_or(f64::INFINITY);
        pass &= g.state <= 0.0 && g.costate <= 0.0 && dual <= 0.0;
        notes.push(format!("{name}: worst gaps {:.2e}, {:.2e}, {:.2e}", g.state, g.costate, dual));
    }
    verdict(pass, notes.join("; "))
}

fn reduced_lq(n: usize, dt: f64) -> (ReducedProblem, ReducedValueGrid) {
    let p = preset("uncontrolled-lq").unwrap();
    let prob = ReducedProblem {
        delta: 1.0,
        dynamics: p.dynamics().unwrap(),
        cost: p.cost_model().unwrap(),
        x_range: (-2.0, 2.0),
        y_range: (-2.0, 2.0),
        nx: n,
        ny: n,
    };
    let g = reduced::solve_reduced_hjb(&prob, dt, 1e-10, 100_000).unwrap();
    (prob, g)
}

fn worst_ratio(updates: &[f64]) -> f64 {
    updates.windows(2).filter(|w| w[0] > 1e-13).map(|w| w[1] / w[0]).fold(0.0, f64::max)
}

fn reduced_hjb() -> Verdict {
    let mut errs = Vec::new();
    let mut residuals = Vec::new();
    let mut pass = true;
    let mut notes = Vec::new();
    for (n, dt) in [(201, 1e-2), (401, 5e-3)] {
        let (prob, g) = reduced_lq(n, dt);
        let q = (-dt).exp();
        let ratio = worst_ratio(&g.updates);
        pass &= ratio <= q;
        let mut err = 0.0f64;
        for i in 1..n - 1 {
            for j in 1..n - 1 {
                let x = g.x(i);
                err = err.max((g.at(i, j) - x * x / 3.0).abs());
            }
        }
        errs.push(err);
        residuals.push(reduced::reduced_pde_residual(&g, &prob));
        notes.push(format!("{n}^2: ratio {ratio:.4} <= {q:.4}, error {err:.3e}"));
    }
    let halving = errs[0] / errs[1];
    pass &= errs[0] <= 2e-2 && halving >= 1.8 && residuals[1] < residuals[0];
    notes.push(format!("error ratio {halving:.3}, residual {:.3e} -> {:.3e}", residuals[0], residuals[1]));
    verdict(pass, notes.join("; "))
}

fn reduction_consistency() -> Verdict {
    let h = 1e-2;
    let (_, g) = reduced_lq(201, 1e-2);
    let p = preset("uncontrolled-lq").unwrap();
    let (dy, cost) = (p.dynamics().unwrap(), p.cost_model().unwrap());
    let a = exp_past(1.0, 1e-2, 20.0);
    let t = cost.truncation_horizon(dy.controls(), 1e-8, h);
    let lq = reduced::cross_validate(&dy, &cost, 1.0, &a, &g, ControlFamily::new(1, None), t, h, ValueOptions::default()).unwrap();
    let p = preset("controlled-memory-lq").unwrap();
    let (dy, cost) = (p.dynamics().unwrap(), p.cost_model().unwrap());
    let t = cost.truncation_horizon(dy.controls(), 1e-8, h);
    let gaps: Vec<f64> = [(2, 2e-2, 101), (4, 1e-2, 201), (8, 5e-3, 401)]
        .into_iter()
        .map(|(m, dt, n)| {
            let prob = ReducedProblem {
                delta: 1.0,
                dynamics: dy.clone(),
                cost: cost.clone(),
                x_range: (-2.0, 2.0),
                y_range: (-2.0, 2.0),
                nx: n,
                ny: n,
            };
            let g = reduced::solve_reduced_hjb(&prob, dt, 1e-10, 100_000).unwrap();
            let fam = ControlFamily::new(m, Some(2.0));
            reduced::cross_validate(&dy, &cost, 1.0, &a, &g, fam, t, h, ValueOptions::default()).unwrap().gap
        })
        .collect();
    let pass = lq.gap <= 3e-2 && gaps[1] < gaps[0] && gaps[2] < gaps[1];
    verdict(
        pass,
        format!("uncontrolled gap {:.3e}; controlled gaps {:.3e} -> {:.3e} -> {:.3e}", lq.gap, gaps[0], gaps[1], gaps[2]),
    )
}

fn holder_probe() -> Verdict {
    let p = preset("linear-memory").unwrap();
    let (dy, k) = (p.dynamics().unwrap(), p.kernel().unwrap());
    let theta = dynamics::growth_estimate(&dy, &k);
    let h = 1e-3;
    let mut pass = true;
    let mut notes = vec![format!("theta {theta:.3}")];
    for mult in [0.5, 2.0] {
        let lambda = mult * theta;
        let cost = CostModel::new(p.cost.build(), lambda).unwrap();
        let t = cost.truncation_horizon(dy.controls(), 1e-8, h);
        let prob = Problem { dynamics: &dy, kernel: &k, cost: &cost };
        let v = |x: f64| {
            let a = HistoryState::with_zero_past(vec![x], 1e-2, 10.0).unwrap();
            value::value_estimate(prob, &a, ControlFamily::new(1, None), t, h, ValueOptions::default()).unwrap().value
        };
        let v0 = v(0.0);
        let pts: Vec<(f64, f64)> = [1e-6, 1e-5, 1e-4, 1e-3].into_iter().map(|e| (e, (v(e) - v0).abs())).collect();
        let slope = value::log_log_slope(&pts).unwrap_or(f64::NAN);
        let predicted = value::predicted_holder_exponent(lambda, theta);
        pass &= (slope - predicted).abs() <= 0.2;
        notes.push(format!("lambda {lambda:.3}: slope {slope:.3} vs {predicted:.3}"));
    }
    verdict(pass, notes.join("; "))
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 10] = [
        ("solver agreement", solver_agreement),
        ("linear-memory oracle", linear_memory_oracle),
        ("Gronwall estimate", gronwall),
        ("dynamic programming", dpp),
        ("operator identities", operator_identities),
        ("boundary value problem", bvp),
        ("Hamiltonian regularity", hamiltonian_regularity),
        ("reduced HJB", reduced_hjb),
        ("reduction consistency", reduction_consistency),
        ("Hölder probe", holder_probe),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        failed += usize::from(!v.pass);
        println!(
            "{} criterion {:>2} {name}: {} [{:.1?}]",
            if v.pass { "PASS" } else { "FAIL" },
            i + 1,
            v.detail,
            start.elapsed()
        );
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
