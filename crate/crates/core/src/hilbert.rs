//! The operators `T`, `T*` and `B = (I + T*T)^{-1}` on
//! `E = R^d x L^2(0, inf; R^d)`.
//!
//! `T(y, w) = (y - w(0), -w')` and, on `E_0`, `T*(x, z) = (x, z')`.
//! `B(x, z) = (y, w)` solves `-w'' + w = z` with the Robin condition
//! `-2 w'(0) + w(0) = x` and `y = (x + w(0)) / 2`.
//!
//! The boundary problem is solved through the decaying Green's function:
//! `w = p + c e^{-s}` with `p = (P + Q) / 2`,
//! `P(s) = int_0^s e^{-(s - t)} z(t) dt`, `Q(s) = int_s^inf e^{-(t - s)} z(t) dt`
//! and `c = (x + p(0)) / 3`. `P` and `Q` are accumulated by exact exponential
//! weights against a local cubic interpolant of `z`, and inner products use
//! Gregory end corrections, so identities hold to fourth order in the step.
//! A second-order finite-difference solve serves as an independent check.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{GridFn, Rule, Tail};
use crate::kernel::HistoryState;

/// A point of `E`; same representation as a history state.
pub type EPoint = HistoryState;

/// Default tolerance of the `E_0` membership test used by [`apply_tstar`].
pub const E0_TOL: f64 = 1e-9;

const MIN_NODES: usize = 8;

/// `<a, b>_E = a.x . b.x + int a.z . b.z` (fourth-order quadrature).
pub fn inner(a: &EPoint, b: &EPoint) -> Result<f64> {
    a.z.check_same_grid(&b.z, "inner product")?;
    let xx: f64 = a.x.iter().zip(&b.x).map(|(p, q)| p * q).sum();
    Ok(xx + a.z.weighted_dot(&b.z, Rule::Gregory))
}

pub fn norm(a: &EPoint) -> f64 {
    let xx: f64 = a.x.iter().map(|v| v * v).sum();
    (xx + a.z.weighted_dot(&a.z, Rule::Gregory)).max(0.0).sqrt()
}

fn l2_sq(f: &GridFn) -> f64 {
    f.weighted_dot(f, Rule::Gregory)
}

/// `T(y, w) = (y - w(0), -w')` with `w'` by finite differences.
pub fn apply_t(y: &[f64], w: &GridFn) -> Result<EPoint> {
    if y.len() != w.dim() {
        return Err(Error::DimensionMismatch { name: "y", expected: w.dim(), found: y.len() });
    }
    let x = y.iter().zip(w.first()).map(|(a, b)| a - b).collect();
    EPoint::new(x, w.derivative()?.map(|v| -v)?)
}

/// `T*(x, z) = (x, z')`, defined on `E_0` only.
pub fn apply_tstar(alpha: &EPoint) -> Result<EPoint> {
    apply_tstar_with_tol(alpha, E0_TOL)
}

pub fn apply_tstar_with_tol(alpha: &EPoint, tol: f64) -> Result<EPoint> {
    let gap = alpha.e0_gap();
    if gap > tol {
        return Err(Error::NotInDomain { gap });
    }
    EPoint::new(alpha.x.clone(), alpha.z.derivative()?)
}

/// `B(alpha)` with its derivative channels.
#[derive(Debug, Clone, PartialEq)]
pub struct BResult {
    pub y: Vec<f64>,
    pub w: GridFn,
    /// `w'` in closed form.
    pub dw: GridFn,
    /// `w''`, equal to `w - z`.
    pub ddw: GridFn,
    pub w0: Vec<f64>,
    pub dw0: Vec<f64>,
    /// Largest gap to the finite-difference solve.
    pub route_gap: f64,
    pub route_tolerance: f64,
}

impl BResult {
    /// `B(alpha)` as a point of `E`.
    pub fn point(&self) -> EPoint {
        EPoint { x: self.y.clone(), z: self.w.clone() }
    }

    /// `max |-2 w'(0) + w(0) - x|` over components.
    pub fn robin_residual(&self, x: &[f64]) -> f64 {
        (0..x.len())
            .map(|c| (-2.0 * self.dw0[c] + self.w0[c] - x[c]).abs())
            .fold(0.0, f64::max)
    }

    /// Interior grid residual `-w'' + w - z`, with `w''` from a fourth-order
    /// difference of `w`, at nodes `2..n-3`.
    pub fn residual_profile(&self, z: &GridFn) -> Vec<f64> {
        let (n, d, h) = (self.w.nodes(), self.w.dim(), self.w.step());
        let w = self.w.data();
        let mut out = vec![0.0; n * d];
        for j in 2..n - 2 {
            for c in 0..d {
                let f = |i: usize| w[i * d + c];
                let second =
                    (-f(j + 2) + 16.0 * f(j + 1) - 30.0 * f(j) + 16.0 * f(j - 1) - f(j - 2)) / (12.0 * h * h);
                out[j * d + c] = -second + f(j) - z.node(j)[c];
            }
        }
        out
    }

    pub fn interior_residual(&self, z: &GridFn) -> f64 {
        self.residual_profile(z).iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// CSV with columns `s, w_c, dw_c, residual_c` per component.
    pub fn write_csv<W: Write>(&self, z: &GridFn, writer: W) -> Result<()> {
        let d = self.w.dim();
        let residual = self.residual_profile(z);
        let mut out = csv::Writer::from_writer(writer);
        let mut header = vec!["s".to_string()];
        for c in 1..=d {
            header.extend([format!("w_{c}"), format!("dw_{c}"), format!("residual_{c}")]);
        }
        out.write_record(&header)?;
        for j in 0..self.w.nodes() {
            let mut row = vec![(j as f64 * self.w.step()).to_string()];
            for c in 0..d {
                row.push(self.w.node(j)[c].to_string());
                row.push(self.dw.node(j)[c].to_string());
                row.push(residual[j * d + c].to_string());
            }
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

const GAUSS8: [(f64, f64); 4] = [
    (0.183_434_642_495_649_8, 0.362_683_783_378_362_0),
    (0.525_532_409_916_329_0, 0.313_706_645_877_887_3),
    (0.796_666_477_413_626_7, 0.222_381_034_453_374_5),
    (0.960_289_856_497_536_3, 0.101_228_536_290_376_3),
];

/// `int_0^h kernel(sigma) l_i(sigma) d sigma` for the cubic Lagrange basis on
/// nodes `(offset + i) h`, `i = 0..3`.
fn cubic_weights(h: f64, offset: f64, kernel: impl Fn(f64) -> f64) -> [f64; 4] {
    let nodes: [f64; 4] = std::array::from_fn(|i| (offset + i as f64) * h);
    let mut w = [0.0; 4];
    for &(x, gw) in &GAUSS8 {
        for sign in [-1.0, 1.0] {
            let sigma = 0.5 * h * (1.0 + sign * x);
            let kv = kernel(sigma) * 0.5 * h * gw;
            for i in 0..4 {
                let mut l = 1.0;
                for m in 0..4 {
                    if m != i {
                        l *= (sigma - nodes[m]) / (nodes[i] - nodes[m]);
                    }
                }
                w[i] += kv * l;
            }
        }
    }
    w
}

struct GreenPieces {
    /// `P(s_j)`, `Q(s_j)` per component, node-major.
    p_fwd: Vec<f64>,
    q_bwd: Vec<f64>,
}

fn q_at_end(z: &GridFn) -> Vec<f64> {
    match z.tail() {
        Tail::Zero => vec![0.0; z.dim()],
        Tail::ExponentialDecay(r) => z.last().iter().map(|v| v / (1.0 + r)).collect(),
    }
}

fn green_pieces(z: &GridFn) -> Result<GreenPieces> {
    let (n, d, h) = (z.nodes(), z.dim(), z.step());
    if n < MIN_NODES {
        return Err(Error::invalid("z", format!("need at least {MIN_NODES} nodes, got {n}")));
    }
    let decay = (-h).exp();
    let fwd: [[f64; 4]; 3] = [0.0, -1.0, -2.0].map(|o| cubic_weights(h, o, |s| (-(h - s)).exp()));
    let bwd: [[f64; 4]; 3] = [0.0, -1.0, -2.0].map(|o| cubic_weights(h, o, |s| (-s).exp()));
    let stencil = |j: usize| -> (usize, usize) {
        let b = j.saturating_sub(1).min(n - 4);
        (b, j - b)
    };
    let data = z.data();
    let mut p_fwd = vec![0.0; n * d];
    let mut q_bwd = vec![0.0; n * d];
    let q_end = q_at_end(z);
    q_bwd[(n - 1) * d..].copy_from_slice(&q_end);
    for c in 0..d {
        for j in 0..n - 1 {
            let (b, k) = stencil(j);
            let w = &fwd[k];
            let inc: f64 = (0..4).map(|i| w[i] * data[(b + i) * d + c]).sum();
            p_fwd[(j + 1) * d + c] = decay * p_fwd[j * d + c] + inc;
        }
        for j in (0..n - 1).rev() {
            let (b, k) = stencil(j);
            let w = &bwd[k];
            let inc: f64 = (0..4).map(|i| w[i] * data[(b + i) * d + c]).sum();
            q_bwd[j * d + c] = decay * q_bwd[(j + 1) * d + c] + inc;
        }
    }
    Ok(GreenPieces { p_fwd, q_bwd })
}

/// Second-order finite-difference solution of `-w'' + w = z`,
/// `-2 w'(0) + w(0) = x`, `w'(S) + w(S) = Q(S)` on the grid of `z`.
pub fn fd_boundary_solve(alpha: &EPoint) -> Result<GridFn> {
    let z = &alpha.z;
    let (n, d, h) = (z.nodes(), z.dim(), z.step());
    if n < MIN_NODES {
        return Err(Error::invalid("z", format!("need at least {MIN_NODES} nodes, got {n}")));
    }
    let q_end = q_at_end(z);
    let h2 = h * h;
    let mut out = vec![0.0; n * d];
    let (mut diag, mut upper, mut rhs) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for c in 0..d {
        // rows: lower[j] w_{j-1} + diag[j] w_j + upper[j] w_{j+1} = rhs[j]
        let lower = |j: usize| if j + 1 == n { -2.0 / h2 } else { -1.0 / h2 };
        for j in 0..n {
            diag[j] = 2.0 / h2 + 1.0;
            upper[j] = -1.0 / h2;
            rhs[j] = z.node(j)[c];
        }
        diag[0] = (2.0 + h) / h2 + 1.0;
        upper[0] = -2.0 / h2;
        rhs[0] += alpha.x[c] / h;
        diag[n - 1] = (2.0 + 2.0 * h) / h2 + 1.0;
        rhs[n - 1] += 2.0 * q_end[c] / h;
        // Thomas elimination
        for j in 1..n {
            let m = lower(j) / diag[j - 1];
            diag[j] -= m * upper[j - 1];
            rhs[j] -= m * rhs[j - 1];
        }
        out[(n - 1) * d + c] = rhs[n - 1] / diag[n - 1];
        for j in (0..n - 1).rev() {
            out[j * d + c] = (rhs[j] - upper[j] * out[(j + 1) * d + c]) / diag[j];
        }
    }
    GridFn::new(h, d, out, Tail::ExponentialDecay(1.0))
}

/// Error scale of the finite-difference route:
/// `h^2 (|x| + 2 max|z| + max|z''|) + 1e-12`, `z''` by second differences.
fn route_tolerance(alpha: &EPoint) -> f64 {
    let z = &alpha.z;
    let (n, d, h) = (z.nodes(), z.dim(), z.step());
    let data = z.data();
    let mut curv: f64 = 0.0;
    for j in 1..n - 1 {
        for c in 0..d {
            let dd = data[(j + 1) * d + c] - 2.0 * data[j * d + c] + data[(j - 1) * d + c];
            curv = curv.max(dd.abs() / (h * h));
        }
    }
    let x = alpha.x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    h * h * (x + 2.0 * z.sup_norm() + curv) + 1e-12
}

/// `B(alpha)`, cross-checked against the finite-difference solve.
pub fn apply_b(alpha: &EPoint) -> Result<BResult> {
    let z = &alpha.z;
    let (n, d, h) = (z.nodes(), z.dim(), z.step());
    let GreenPieces { p_fwd, q_bwd } = green_pieces(z)?;
    let p0: Vec<f64> = (0..d).map(|c| 0.5 * q_bwd[c]).collect();
    let coef: Vec<f64> = (0..d).map(|c| (alpha.x[c] + p0[c]) / 3.0).collect();
    let mut w = vec![0.0; n * d];
    let mut dw = vec![0.0; n * d];
    let mut ddw = vec![0.0; n * d];
    for j in 0..n {
        let e = (-(j as f64) * h).exp();
        for c in 0..d {
            let i = j * d + c;
            w[i] = 0.5 * (p_fwd[i] + q_bwd[i]) + coef[c] * e;
            dw[i] = 0.5 * (q_bwd[i] - p_fwd[i]) - coef[c] * e;
            ddw[i] = w[i] - z.data()[i];
        }
    }
    let w0: Vec<f64> = w[..d].to_vec();
    let dw0: Vec<f64> = (0..d).map(|c| p0[c] - coef[c]).collect();
    let y = (0..d).map(|c| 0.5 * (alpha.x[c] + w0[c])).collect();
    let tail = Tail::ExponentialDecay(1.0);
    let w = GridFn::new(h, d, w, tail)?;

    let fd = fd_boundary_solve(alpha)?;
    let route_gap = w.data().iter().zip(fd.data()).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
    let route_tolerance = route_tolerance(alpha);
    if !(route_gap <= route_tolerance) {
        return Err(Error::InconsistentBoundarySolve { gap: route_gap, tolerance: route_tolerance });
    }
    Ok(BResult {
        y,
        w,
        dw: GridFn::new(h, d, dw, tail)?,
        ddw: GridFn::new(h, d, ddw, tail)?,
        w0,
        dw0,
        route_gap,
        route_tolerance,
    })
}

/// Both evaluations of `||alpha||_B^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BNormRoutes {
    /// `<B alpha, alpha> = y . x + int w . z`.
    pub direct: f64,
    /// `|x|^2 / 2 + |w(0)|^2 / 2 + ||w||_{H^1}^2`.
    pub identity: f64,
}

impl BNormRoutes {
    pub fn relative_gap(&self) -> f64 {
        (self.direct - self.identity).abs() / self.direct.abs().max(self.identity.abs()).max(f64::MIN_POSITIVE)
    }
}

pub fn b_norm_routes(alpha: &EPoint) -> Result<BNormRoutes> {
    let b = apply_b(alpha)?;
    Ok(b_norm_routes_from(alpha, &b))
}

fn b_norm_routes_from(alpha: &EPoint, b: &BResult) -> BNormRoutes {
    let yx: f64 = b.y.iter().zip(&alpha.x).map(|(p, q)| p * q).sum();
    let xx: f64 = alpha.x.iter().map(|v| v * v).sum();
    let ww0: f64 = b.w0.iter().map(|v| v * v).sum();
    BNormRoutes {
        direct: yx + b.w.weighted_dot(&alpha.z, Rule::Gregory),
        identity: 0.5 * xx + 0.5 * ww0 + l2_sq(&b.w) + l2_sq(&b.dw),
    }
}

/// `||alpha||_B^2 = <B alpha, alpha>`.
pub fn b_norm_sq(alpha: &EPoint) -> Result<f64> {
    let value = b_norm_routes(alpha)?.direct;
    if value < -1e-12 {
        return Err(Error::NegativeBNorm { value });
    }
    Ok(value.max(0.0))
}

/// `<T B alpha, alpha>` with `w'` from the closed-form channel.
pub fn tb_form(alpha: &EPoint) -> Result<f64> {
    let b = apply_b(alpha)?;
    Ok(tb_form_from(alpha, &b))
}

fn tb_form_from(alpha: &EPoint, b: &BResult) -> f64 {
    let first: f64 = (0..alpha.dim()).map(|c| (b.y[c] - b.w0[c]) * alpha.x[c]).sum();
    first - b.dw.weighted_dot(&alpha.z, Rule::Gregory)
}

/// `(3/8) |x - w(0)|^2 + x . w(0) / 2`.
pub fn tb_closed_form(alpha: &EPoint) -> Result<f64> {
    let b = apply_b(alpha)?;
    Ok((0..alpha.dim())
        .map(|c| {
            let gap = alpha.x[c] - b.w0[c];
            0.375 * gap * gap + 0.5 * alpha.x[c] * b.w0[c]
        })
        .sum())
}

/// Dual norm `||z||_{(H^1)'} = ||r||_{H^1}` with `-r'' + r = z`, `r'(0) = 0`.
pub fn dual_h1_norm(z: &GridFn) -> Result<f64> {
    let (n, d, h) = (z.nodes(), z.dim(), z.step());
    let GreenPieces { p_fwd, q_bwd } = green_pieces(z)?;
    let p0: Vec<f64> = (0..d).map(|c| 0.5 * q_bwd[c]).collect();
    let mut r = vec![0.0; n * d];
    let mut dr = vec![0.0; n * d];
    for j in 0..n {
        let e = (-(j as f64) * h).exp();
        for c in 0..d {
            let i = j * d + c;
            r[i] = 0.5 * (p_fwd[i] + q_bwd[i]) + p0[c] * e;
            dr[i] = 0.5 * (q_bwd[i] - p_fwd[i]) - p0[c] * e;
        }
    }
    let tail = Tail::ExponentialDecay(1.0);
    let r = GridFn::new(h, d, r, tail)?;
    let dr = GridFn::new(h, d, dr, tail)?;
    Ok((l2_sq(&r) + l2_sq(&dr)).max(0.0).sqrt())
}

/// Everything the identity checks need from one application of `B`.
#[derive(Debug, Clone, Serialize)]
pub struct OperatorReport {
    pub b_norm: BNormRoutes,
    pub tb: f64,
    pub tb_closed: f64,
    /// `||B alpha||_E`.
    pub b_image_norm: f64,
    pub alpha_norm: f64,
    pub dual_h1: f64,
    pub robin_residual: f64,
    pub route_gap: f64,
}

pub fn operator_report(alpha: &EPoint) -> Result<OperatorReport> {
    let b = apply_b(alpha)?;
    let b_norm = b_norm_routes_from(alpha, &b);
    if b_norm.direct < -1e-12 {
        return Err(Error::NegativeBNorm { value: b_norm.direct });
    }
    let tb_closed = (0..alpha.dim())
        .map(|c| {
            let gap = alpha.x[c] - b.w0[c];
            0.375 * gap * gap + 0.5 * alpha.x[c] * b.w0[c]
        })
        .sum();
    Ok(OperatorReport {
        b_norm,
        tb: tb_form_from(alpha, &b),
        tb_closed,
        b_image_norm: norm(&b.point()),
        alpha_norm: norm(alpha),
        dual_h1: dual_h1_norm(&alpha.z)?,
        robin_residual: b.robin_residual(&alpha.x),
        route_gap: b.route_gap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn point(x: f64, h: f64, f: impl Fn(f64) -> f64) -> EPoint {
        EPoint::scalar(x, h, 40.0, Tail::Zero, f).unwrap()
    }

    #[test]
    fn t_of_simple_pairs() {
        let zero = GridFn::zeros(1e-2, 5.0, 1).unwrap();
        let t = apply_t(&[2.0], &zero).unwrap();
        assert_eq!(t.x, vec![2.0]);
        assert_eq!(t.z.sup_norm(), 0.0);

        let w = GridFn::from_scalar_fn(1e-3, 20.0, Tail::Zero, |s| (-s).exp()).unwrap();
        let t = apply_t(&[2.0], &w).unwrap();
        assert_relative_eq!(t.x[0], 1.0);
        let expected = GridFn::from_scalar_fn(1e-3, 20.0, Tail::Zero, |s| (-s).exp()).unwrap();
        let gap = t.z.combine(1.0, &expected, -1.0).unwrap().sup_norm();
        assert!(gap < 1e-6, "{gap}");
    }

    #[test]
    fn tstar_domain() {
        let c = point(3.0, 1e-2, |_| 3.0);
        let t = apply_tstar(&c).unwrap();
        assert_eq!(t.x, vec![3.0]);
        assert!(t.z.sup_norm() < 1e-12);
        let off = point(1.0, 1e-2, |_| 3.0);
        assert!(matches!(apply_tstar(&off), Err(Error::NotInDomain { .. })));
        let e = point(1.0, 1e-3, |s| (-s).exp());
        let t = apply_tstar(&e).unwrap();
        assert_relative_eq!(t.z.node(100)[0], -(-0.1f64).exp(), epsilon = 1e-6);
    }

    #[test]
    fn homogeneous_b() {
        let a = point(1.5, 1e-3, |_| 0.0);
        let b = apply_b(&a).unwrap();
        assert_relative_eq!(b.y[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(b.w0[0], 0.5, epsilon = 1e-14);
        assert_relative_eq!(b.w.node(1000)[0], 0.5 * (-1.0f64).exp(), epsilon = 1e-14);
    }

    #[test]
    fn b_of_exponential_past() {
        let a = point(0.0, 1e-3, |s| (-s).exp());
        let b = apply_b(&a).unwrap();
        assert_relative_eq!(b.w0[0], 1.0 / 3.0, epsilon = 1e-10);
        assert_relative_eq!(b.y[0], 1.0 / 6.0, epsilon = 1e-10);
        assert!(b.robin_residual(&a.x) < 1e-14);
        assert!(b.interior_residual(&a.z) < 1e-8);
        let s: f64 = 1.3;
        let p = 0.5 * (s * (-s).exp() + 0.5 * (-s).exp());
        assert_relative_eq!(b.w.node(1300)[0], p + (-s).exp() / 12.0, epsilon = 1e-10);
    }

    #[test]
    fn b_norm_values() {
        let zero = point(0.0, 1e-3, |_| 0.0);
        assert_eq!(b_norm_sq(&zero).unwrap(), 0.0);
        assert_eq!(tb_form(&zero).unwrap(), 0.0);

        let r = b_norm_routes(&point(1.0, 1e-3, |_| 0.0)).unwrap();
        assert_relative_eq!(r.direct, 2.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(r.identity, 2.0 / 3.0, epsilon = 1e-10);

        let a = point(1.0, 1e-3, |s| (-s).exp());
        let r = b_norm_routes(&a).unwrap();
        assert_relative_eq!(r.direct, 31.0 / 24.0, epsilon = 1e-9);
        assert!(r.relative_gap() < 1e-9);
        assert_relative_eq!(tb_form(&a).unwrap(), 0.375, epsilon = 1e-9);
        assert_relative_eq!(tb_closed_form(&a).unwrap(), 0.375, epsilon = 1e-9);
    }

    #[test]
    fn dual_norm_of_exponential() {
        assert_eq!(dual_h1_norm(&GridFn::zeros(1e-2, 5.0, 1).unwrap()).unwrap(), 0.0);
        let z = GridFn::from_scalar_fn(1e-3, 40.0, Tail::Zero, |s| (-s).exp()).unwrap();
        assert_relative_eq!(dual_h1_norm(&z).unwrap(), 0.375f64.sqrt(), epsilon = 1e-10);
    }

    #[test]
    fn fd_route_is_second_order() {
        let gap = |h: f64| {
            let a = point(0.3, h, |s| (-s).exp() * (2.0 * s).cos());
            apply_b(&a).unwrap().route_gap
        };
        let order = (gap(2e-2) / gap(1e-2)).log2();
        assert!(order > 1.9, "order {order}");
    }

    #[test]
    fn too_few_nodes() {
        let a = EPoint::scalar(0.0, 1.0, 4.0, Tail::Zero, |_| 0.0).unwrap();
        assert!(apply_b(&a).is_err());
    }

    #[test]
    fn csv_export() {
        let a = point(1.0, 0.5, |s| (-s).exp());
        let b = apply_b(&a).unwrap();
        let mut buf = Vec::new();
        b.write_csv(&a.z, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("s,w_1,dw_1,residual_1"));
        assert_eq!(text.lines().count(), 82);
    }
}
