//! Memory kernels, history states and the memory integral
//! `int_0^inf A(s) x(t - s) ds`.
//!
//! Matrices are stored row-major with `memory_dim` rows and `state_dim`
//! columns. Norms of matrix-valued functions use the Frobenius norm
//! pointwise.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridFn, Tail};

/// One term `coeff * exp(-rate s)` of an exponential kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpTerm {
    pub rate: f64,
    pub coeff: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelForm {
    Exponential(ExpTerm),
    SumOfExponentials(Vec<ExpTerm>),
    /// Samples `A_0..A_N` at spacing `step`, linear in between and zero past `N * step`.
    /// `smooth` marks the table as a sampled `H^1` function.
    Tabulated {
        step: f64,
        samples: Vec<f64>,
        smooth: bool,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    form: KernelForm,
    state_dim: usize,
    memory_dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KernelNorms {
    pub l1: f64,
    pub l2: f64,
    /// `L^2` norm of the derivative, absent for non-smooth tables.
    pub dl2: Option<f64>,
}

impl KernelNorms {
    /// Full `H^1` norm when the derivative norm is available.
    pub fn h1(&self) -> Option<f64> {
        self.dl2.map(|d| (self.l2 * self.l2 + d * d).sqrt())
    }
}

fn check_term(term: &ExpTerm, k: usize, d: usize) -> Result<()> {
    if !(term.rate > 0.0 && term.rate.is_finite()) {
        return Err(Error::invalid(
            "kernel.rate",
            format!("exponential rates must be positive, got {}", term.rate),
        ));
    }
    if term.coeff.len() != k * d {
        return Err(Error::DimensionMismatch {
            name: "kernel.coeff",
            expected: k * d,
            found: term.coeff.len(),
        });
    }
    if term.coeff.iter().any(|c| !c.is_finite()) {
        return Err(Error::invalid("kernel.coeff", "non-finite coefficient"));
    }
    Ok(())
}

fn frobenius_dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Kernel {
    /// Scalar kernel `coeff * exp(-rate s)`.
    pub fn exponential(rate: f64, coeff: f64) -> Result<Self> {
        Self::exponential_matrix(rate, vec![coeff], 1, 1)
    }

    pub fn exponential_matrix(rate: f64, coeff: Vec<f64>, memory_dim: usize, state_dim: usize) -> Result<Self> {
        let term = ExpTerm { rate, coeff };
        check_term(&term, memory_dim, state_dim)?;
        Ok(Self {
            form: KernelForm::Exponential(term),
            state_dim,
            memory_dim,
        })
    }

    pub fn sum_of_exponentials(terms: Vec<ExpTerm>, memory_dim: usize, state_dim: usize) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::invalid("kernel.terms", "need at least one term"));
        }
        for t in &terms {
            check_term(t, memory_dim, state_dim)?;
        }
        Ok(Self {
            form: KernelForm::SumOfExponentials(terms),
            state_dim,
            memory_dim,
        })
    }

    pub fn tabulated(
        step: f64,
        samples: Vec<f64>,
        memory_dim: usize,
        state_dim: usize,
        smooth: bool,
    ) -> Result<Self> {
        let width = memory_dim * state_dim;
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::invalid("kernel.step", format!("must be positive, got {step}")));
        }
        if width == 0 || samples.len() % width != 0 || samples.len() < 2 * width {
            return Err(Error::invalid(
                "kernel.samples",
                format!("need at least two {memory_dim}x{state_dim} samples, got {} values", samples.len()),
            ));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("kernel.samples", "non-finite sample"));
        }
        if smooth {
            let last = &samples[samples.len() - width..];
            if last.iter().any(|v| v.abs() > 1e-12) {
                return Err(Error::invalid(
                    "kernel.smooth",
                    "a smooth table must vanish at its last sample",
                ));
            }
        }
        Ok(Self {
            form: KernelForm::Tabulated { step, samples, smooth },
            state_dim,
            memory_dim,
        })
    }

    /// Reads a table from CSV rows `s, a_11, a_12, ..` (row-major entries).
    /// The `s` column must start at 0 and be uniformly spaced; a header row is optional.
    pub fn tabulated_from_csv(
        path: impl AsRef<Path>,
        memory_dim: usize,
        state_dim: usize,
        smooth: bool,
    ) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_path(path)?;
        let width = memory_dim * state_dim;
        let mut abscissae = Vec::new();
        let mut samples = Vec::new();
        for record in reader.records() {
            let record = record?;
            let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
            let Ok(row) = parsed else {
                if abscissae.is_empty() {
                    continue; // header
                }
                return Err(Error::invalid("kernel.csv", format!("unparsable row {:?}", record)));
            };
            if row.len() != width + 1 {
                return Err(Error::DimensionMismatch {
                    name: "kernel.csv columns",
                    expected: width + 1,
                    found: row.len(),
                });
            }
            abscissae.push(row[0]);
            samples.extend_from_slice(&row[1..]);
        }
        if abscissae.len() < 2 {
            return Err(Error::invalid("kernel.csv", "need at least two rows"));
        }
        let step = abscissae[1] - abscissae[0];
        for (j, s) in abscissae.iter().enumerate() {
            if (s - j as f64 * step).abs() > 1e-9 * (1.0 + s.abs()) {
                return Err(Error::invalid(
                    "kernel.csv",
                    format!("abscissae must be 0, h, 2h, ..; row {j} has s = {s}"),
                ));
            }
        }
        Self::tabulated(step, samples, memory_dim, state_dim, smooth)
    }

    pub fn form(&self) -> &KernelForm {
        &self.form
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn memory_dim(&self) -> usize {
        self.memory_dim
    }

    /// Exponential terms when the kernel is (a sum of) exponentials.
    pub fn exp_terms(&self) -> Option<&[ExpTerm]> {
        match &self.form {
            KernelForm::Exponential(t) => Some(std::slice::from_ref(t)),
            KernelForm::SumOfExponentials(ts) => Some(ts),
            KernelForm::Tabulated { .. } => None,
        }
    }

    /// End of the support for tables, `None` for exponential forms.
    pub fn support(&self) -> Option<f64> {
        match &self.form {
            KernelForm::Tabulated { step, samples, .. } => {
                let n = samples.len() / (self.memory_dim * self.state_dim);
                Some((n - 1) as f64 * step)
            }
            _ => None,
        }
    }

    /// Writes `A(s)` (row-major) into `out`.
    pub fn matrix_at(&self, s: f64, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        match &self.form {
            KernelForm::Exponential(_) | KernelForm::SumOfExponentials(_) => {
                for t in self.exp_terms().unwrap_or_default() {
                    let f = (-t.rate * s).exp();
                    for (o, c) in out.iter_mut().zip(&t.coeff) {
                        *o += f * c;
                    }
                }
            }
            KernelForm::Tabulated { step, samples, .. } => {
                let width = self.memory_dim * self.state_dim;
                let n = samples.len() / width;
                if s < 0.0 {
                    return;
                }
                let pos = s / step;
                let j = pos.floor() as usize;
                if j + 1 >= n {
                    if j + 1 == n && pos == (n - 1) as f64 {
                        out.copy_from_slice(&samples[(n - 1) * width..]);
                    }
                    return;
                }
                let theta = pos - j as f64;
                let (a, b) = (&samples[j * width..(j + 1) * width], &samples[(j + 1) * width..(j + 2) * width]);
                for c in 0..width {
                    out[c] = a[c] + theta * (b[c] - a[c]);
                }
            }
        }
    }

    /// `out += weight * A(s) x`.
    pub fn accumulate(&self, s: f64, x: &[f64], weight: f64, out: &mut [f64]) {
        let mut m = vec![0.0; self.memory_dim * self.state_dim];
        self.matrix_at(s, &mut m);
        mat_vec_acc(&m, self.memory_dim, self.state_dim, x, weight, out);
    }

    /// `L^1`, `L^2` and derivative-`L^2` norms.
    pub fn norms(&self) -> KernelNorms {
        kernel_norms(self)
    }

    /// Derivative norm, failing for tables not flagged smooth.
    pub fn derivative_l2(&self) -> Result<f64> {
        self.norms().dl2.ok_or(Error::NonSmoothKernel)
    }

    /// Samples `A` at `s = i * spacing`, `i = 0..count`.
    pub fn table(&self, spacing: f64, count: usize) -> KernelTable {
        let width = self.memory_dim * self.state_dim;
        let mut data = vec![0.0; width * count];
        for (i, chunk) in data.chunks_mut(width).enumerate() {
            self.matrix_at(i as f64 * spacing, chunk);
        }
        KernelTable {
            rows: self.memory_dim,
            cols: self.state_dim,
            data,
        }
    }
}

pub(crate) fn mat_vec_acc(m: &[f64], rows: usize, cols: usize, x: &[f64], weight: f64, out: &mut [f64]) {
    for r in 0..rows {
        let row = &m[r * cols..(r + 1) * cols];
        out[r] += weight * frobenius_dot(row, x);
    }
}

/// Kernel matrices precomputed on a uniform grid.
#[derive(Debug, Clone)]
pub struct KernelTable {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl KernelTable {
    pub fn len(&self) -> usize {
        self.data.len() / (self.rows * self.cols)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn matrix(&self, i: usize) -> &[f64] {
        let w = self.rows * self.cols;
        &self.data[i * w..(i + 1) * w]
    }

    /// `out += weight * A_i x`.
    #[inline]
    pub fn apply(&self, i: usize, x: &[f64], weight: f64, out: &mut [f64]) {
        mat_vec_acc(self.matrix(i), self.rows, self.cols, x, weight, out);
    }
}

/// `||A||_{L^1}`, `||A||_{L^2}` and `||A'||_{L^2}`.
///
/// Exponential forms use closed forms (the `L^1` norm of a multi-term sum
/// falls back to Simpson quadrature since the terms may cancel). Tables use
/// the trapezoid rule; their derivative norm is that of the piecewise-linear
/// interpolant and is reported only when the table is flagged smooth.
pub fn kernel_norms(kernel: &Kernel) -> KernelNorms {
    match kernel.form() {
        KernelForm::Exponential(t) => {
            let m = frobenius_dot(&t.coeff, &t.coeff).sqrt();
            KernelNorms {
                l1: m / t.rate,
                l2: m / (2.0 * t.rate).sqrt(),
                dl2: Some(m * (t.rate / 2.0).sqrt()),
            }
        }
        KernelForm::SumOfExponentials(terms) => {
            let mut l2 = 0.0;
            let mut dl2 = 0.0;
            for a in terms {
                for b in terms {
                    let g = frobenius_dot(&a.coeff, &b.coeff);
                    l2 += g / (a.rate + b.rate);
                    dl2 += g * a.rate * b.rate / (a.rate + b.rate);
                }
            }
            let slowest = terms.iter().map(|t| t.rate).fold(f64::INFINITY, f64::min);
            let upper = 40.0 / slowest;
            let panels = 200_000usize;
            let h = upper / panels as f64;
            let mut m = vec![0.0; kernel.memory_dim * kernel.state_dim];
            let mut norm_at = |s: f64| {
                kernel.matrix_at(s, &mut m);
                frobenius_dot(&m, &m).sqrt()
            };
            let mut l1 = norm_at(0.0) + norm_at(upper);
            for i in 1..panels {
                l1 += if i % 2 == 1 { 4.0 } else { 2.0 } * norm_at(i as f64 * h);
            }
            KernelNorms {
                l1: l1 * h / 3.0,
                l2: l2.max(0.0).sqrt(),
                dl2: Some(dl2.max(0.0).sqrt()),
            }
        }
        KernelForm::Tabulated { step, samples, smooth } => {
            let width = kernel.memory_dim * kernel.state_dim;
            let n = samples.len() / width;
            let node = |j: usize| &samples[j * width..(j + 1) * width];
            let abs: Vec<f64> = (0..n).map(|j| frobenius_dot(node(j), node(j)).sqrt()).collect();
            let sq: Vec<f64> = abs.iter().map(|a| a * a).collect();
            let dl2 = smooth.then(|| {
                let mut acc = 0.0;
                for j in 0..n - 1 {
                    let diff: f64 = node(j + 1)
                        .iter()
                        .zip(node(j))
                        .map(|(b, a)| (b - a) * (b - a))
                        .sum();
                    acc += diff / step;
                }
                acc.sqrt()
            });
            KernelNorms {
                l1: crate::grid::trapezoid(*step, &abs),
                l2: crate::grid::trapezoid(*step, &sq).sqrt(),
                dl2,
            }
        }
    }
}

/// A point `(x, z)` of `R^d x L^2(0, inf; R^d)`: current state and past.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryState {
    pub x: Vec<f64>,
    pub z: GridFn,
}

impl HistoryState {
    pub fn new(x: Vec<f64>, z: GridFn) -> Result<Self> {
        if x.len() != z.dim() {
            return Err(Error::DimensionMismatch {
                name: "history.x",
                expected: z.dim(),
                found: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("history.x", "non-finite state"));
        }
        Ok(Self { x, z })
    }

    /// Scalar state with past `z(s) = f(s)` sampled on `[0, horizon]`.
    pub fn scalar(x: f64, step: f64, horizon: f64, tail: Tail, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(vec![x], GridFn::from_scalar_fn(step, horizon, tail, f)?)
    }

    pub fn with_zero_past(x: Vec<f64>, step: f64, horizon: f64) -> Result<Self> {
        let d = x.len();
        Self::new(x, GridFn::zeros(step, horizon, d)?)
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn past_norm(&self) -> f64 {
        self.z.l2_norm()
    }

    /// `(|x|^2 + ||z||^2)^(1/2)`.
    pub fn norm(&self) -> f64 {
        (self.x.iter().map(|v| v * v).sum::<f64>() + self.z.l2_norm_sq()).sqrt()
    }

    /// `|x - z(0)|`.
    pub fn e0_gap(&self) -> f64 {
        euclid_dist(&self.x, self.z.first())
    }

    /// Whether the point lies in `E_0` (past starts at the current state) up to `tol`.
    pub fn in_e0(&self, tol: f64) -> bool {
        self.e0_gap() <= tol
    }

    /// `|x - x'| + ||z - z'||`, requiring both pasts on the same grid.
    pub fn distance(&self, other: &HistoryState) -> Result<f64> {
        let dz = self.z.combine(1.0, &other.z, -1.0)?;
        Ok(euclid_dist(&self.x, &other.x) + dz.l2_norm())
    }

    /// `a * self + b * other`.
    pub fn combine(&self, a: f64, other: &HistoryState, b: f64) -> Result<HistoryState> {
        let x = self.x.iter().zip(&other.x).map(|(p, q)| a * p + b * q).collect();
        HistoryState::new(x, self.z.combine(a, &other.z, b)?)
    }
}

pub(crate) fn euclid_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

pub(crate) fn euclid_norm(a: &[f64]) -> f64 {
    a.iter().map(|p| p * p).sum::<f64>().sqrt()
}

/// `int_S^inf A(offset + sigma) z(sigma) d sigma` for the tail of `z` past its window.
fn tail_memory(kernel: &Kernel, offset: f64, z: &GridFn, out: &mut [f64]) {
    let Tail::ExponentialDecay(r) = z.tail() else {
        return;
    };
    let window = z.horizon();
    let last = z.last();
    match kernel.exp_terms() {
        Some(terms) => {
            for t in terms {
                let w = (-t.rate * (offset + window)).exp() / (t.rate + r);
                mat_vec_acc(&t.coeff, kernel.memory_dim, kernel.state_dim, last, w, out);
            }
        }
        None => {
            let support = kernel.support().unwrap_or(0.0);
            let start = offset + window;
            if start >= support {
                return;
            }
            let KernelForm::Tabulated { step, .. } = kernel.form() else {
                return;
            };
            let cells = ((support - start) / step).ceil().max(1.0) as usize;
            let h = (support - start) / cells as f64;
            for i in 0..=cells {
                let u = start + i as f64 * h;
                let w = if i == 0 || i == cells { 0.5 * h } else { h };
                kernel.accumulate(u, last, w * (-r * (u - start)).exp(), out);
            }
        }
    }
}

/// `int_0^inf A(offset + sigma) z(sigma) d sigma`: the contribution of the
/// initial history to the memory at time `offset`.
pub fn history_memory(kernel: &Kernel, z: &GridFn, offset: f64) -> Result<Vec<f64>> {
    if z.dim() != kernel.state_dim {
        return Err(Error::DimensionMismatch {
            name: "history",
            expected: kernel.state_dim,
            found: z.dim(),
        });
    }
    let mut out = vec![0.0; kernel.memory_dim];
    history_memory_into(kernel, z, offset, &mut out);
    Ok(out)
}

pub(crate) fn history_memory_into(kernel: &Kernel, z: &GridFn, offset: f64, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    let n = z.nodes();
    let h = z.step();
    let mut m = vec![0.0; kernel.memory_dim * kernel.state_dim];
    for j in 0..n {
        let w = if j == 0 || j + 1 == n { 0.5 * h } else { h };
        kernel.matrix_at(offset + j as f64 * h, &mut m);
        mat_vec_acc(&m, kernel.memory_dim, kernel.state_dim, z.node(j), w, out);
    }
    tail_memory(kernel, offset, z, out);
}

/// The memory `G(t) = int_0^t A(s) y(t - s) ds + int_0^inf A(t + s) z(s) ds`
/// at `t = (n - 1) h`, where `nodes` holds the computed trajectory
/// `y(0), y(h), .., y(t)` (`d` values per node). Both pieces use the
/// trapezoid rule on their own grids.
pub fn memory_integral(kernel: &Kernel, history: &HistoryState, nodes: &[f64], h: f64) -> Result<Vec<f64>> {
    let d = kernel.state_dim;
    if history.dim() != d {
        return Err(Error::DimensionMismatch {
            name: "history",
            expected: d,
            found: history.dim(),
        });
    }
    if nodes.is_empty() || nodes.len() % d != 0 {
        return Err(Error::invalid("trajectory", "need at least one node of matching dimension"));
    }
    if !(h > 0.0) {
        return Err(Error::invalid("h", format!("must be positive, got {h}")));
    }
    let n = nodes.len() / d - 1;
    let t = n as f64 * h;
    let mut out = history_memory(kernel, &history.z, t)?;
    let mut m = vec![0.0; kernel.memory_dim * d];
    for j in 0..=n {
        if n == 0 {
            break;
        }
        let w = if j == 0 || j == n { 0.5 * h } else { h };
        kernel.matrix_at(j as f64 * h, &mut m);
        let y = &nodes[(n - j) * d..(n - j + 1) * d];
        mat_vec_acc(&m, kernel.memory_dim, d, y, w, &mut out);
    }
    Ok(out)
}

/// `(int_0^h e^{-rate tau} d tau, int_0^h e^{-rate tau} tau/h d tau)`.
pub(crate) fn exp_linear_moments(rate: f64, h: f64) -> (f64, f64) {
    let a = rate * h;
    if a == 0.0 {
        return (h, 0.5 * h);
    }
    let i0 = -(-a).exp_m1() / rate;
    // 1 - e^{-a}(1 + a), by series when cancellation would bite
    let c = if a < 1e-3 {
        a * a * (0.5 - a / 3.0 + a * a / 8.0 - a * a * a / 30.0 + a.powi(4) / 144.0)
    } else {
        -(-a).exp_m1() - a * (-a).exp()
    };
    (i0, c / (rate * rate * h))
}

/// Integrates `m' = x(t) - rate m` along a sampled path, exactly for the
/// piecewise-linear interpolant of the path. Returns `m` at the last node.
pub fn exp_memory_channel(rate: f64, path: &GridFn, m0: &[f64]) -> Result<Vec<f64>> {
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(Error::invalid("rate", format!("must be positive, got {rate}")));
    }
    if m0.len() != path.dim() {
        return Err(Error::DimensionMismatch {
            name: "m0",
            expected: path.dim(),
            found: m0.len(),
        });
    }
    let h = path.step();
    let decay = (-rate * h).exp();
    let (i0, i1) = exp_linear_moments(rate, h);
    let (w_old, w_new) = (i1, i0 - i1);
    let mut m = m0.to_vec();
    for j in 0..path.nodes() - 1 {
        let (a, b) = (path.node(j), path.node(j + 1));
        for c in 0..m.len() {
            m[c] = decay * m[c] + w_old * a[c] + w_new * b[c];
        }
    }
    Ok(m)
}

/// `int_0^inf e^{-rate s} z(s) ds` per component: trapezoid on the window
/// plus the analytic tail.
pub fn moment(z: &GridFn, rate: f64) -> Result<Vec<f64>> {
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(Error::invalid("rate", format!("must be positive, got {rate}")));
    }
    let n = z.nodes();
    let h = z.step();
    let mut out = vec![0.0; z.dim()];
    for j in 0..n {
        let w = if j == 0 || j + 1 == n { 0.5 * h } else { h } * (-rate * j as f64 * h).exp();
        for (o, v) in out.iter_mut().zip(z.node(j)) {
            *o += w * v;
        }
    }
    if let Tail::ExponentialDecay(r) = z.tail() {
        let w = (-rate * z.horizon()).exp() / (rate + r);
        for (o, v) in out.iter_mut().zip(z.last()) {
            *o += w * v;
        }
    }
    Ok(out)
}
