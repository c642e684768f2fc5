//! Seeded random inputs for sampled property checks.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::grid::{GridFn, Tail};
use crate::kernel::HistoryState;

/// Random smooth past `z(s) = sum_i a_i e^{-b_i s} cos(w_i s + phi_i)` with
/// `terms` modes, Gaussian amplitudes scaled by `amplitude`, decay rates in
/// `[0.5, 2]` and frequencies in `[0, max_frequency]`.
pub fn smooth_past<R: Rng>(
    rng: &mut R,
    dim: usize,
    step: f64,
    horizon: f64,
    terms: usize,
    amplitude: f64,
    max_frequency: f64,
) -> Result<GridFn> {
    let modes: Vec<Vec<(f64, f64, f64, f64)>> = (0..dim)
        .map(|_| {
            (0..terms)
                .map(|_| {
                    let a: f64 = rng.sample(StandardNormal);
                    (
                        amplitude * a,
                        rng.gen_range(0.5..2.0),
                        rng.gen_range(0.0..=max_frequency),
                        rng.gen_range(0.0..std::f64::consts::TAU),
                    )
                })
                .collect()
        })
        .collect();
    GridFn::from_fn(step, horizon, dim, Tail::Zero, |s, out| {
        for (o, m) in out.iter_mut().zip(&modes) {
            *o = m.iter().map(|&(a, b, w, phi)| a * (-b * s).exp() * (w * s + phi).cos()).sum();
        }
    })
}

/// Random smooth state; `x = z(0)` when `in_e0`, an independent Gaussian otherwise.
pub fn smooth_state<R: Rng>(rng: &mut R, dim: usize, step: f64, horizon: f64, in_e0: bool) -> Result<HistoryState> {
    let z = smooth_past(rng, dim, step, horizon, 3, 1.0, 3.0)?;
    let x = if in_e0 {
        z.first().to_vec()
    } else {
        (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
    };
    HistoryState::new(x, z)
}

/// Gaussian vector of length `dim` scaled by `scale`.
pub fn gaussian<R: Rng>(rng: &mut R, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}
