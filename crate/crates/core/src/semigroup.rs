//! The delay semigroup on the lifted space.
//!
//! `T0(t)` (no delay coupling) is evaluated in closed form. The full semigroup
//! `T(t)` is computed two ways: a fixed-step RK4 method of steps on the delay
//! equation, and a fixed-point iteration of the perturbation (Volterra)
//! formula built on `T0`. Matrix representatives on the discretized lifted
//! space come from propagating the canonical basis through the integrator.
//!
//! Convention at the history seam: a trajectory is right-continuous at
//! `t = 0`, so `z(0) = x` even when the stored history has `f(0) != x`.

use std::collections::HashMap;
use std::fmt::Write as _;

use num_complex::Complex64;

use crate::delay_state::{lifted_norm, lifted_weights, GridSpec, HistorySegment, LiftedState, NODE_SNAP};
use crate::error::{Error, Result};
use crate::numkernel::{expm, hermitian_max_eigenvalue, op_norm, weighted_op_norm, CMatrix, CVector, ONE, ZERO};
use crate::output::fmt_float;

/// Tolerance on `omega0` for contraction-mode operations.
pub const CONTRACTION_TOL: f64 = 1e-10;

/// One delayed term `A_k z(t - h_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Delay {
    pub matrix: CMatrix,
    pub h: f64,
}

/// `z'(t) = A z(t) + sum_k A_k z(t - h_k) + B u(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DelaySystem {
    a: CMatrix,
    delays: Vec<Delay>,
    b: CMatrix,
    omega0: f64,
}

impl DelaySystem {
    pub fn new(a: CMatrix, mut delays: Vec<Delay>, b: CMatrix) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::Dimension(format!("A must be square, got {}x{}", a.rows(), a.cols())));
        }
        let n = a.rows();
        if delays.is_empty() {
            return Err(Error::Config("at least one delay term is required".into()));
        }
        for d in &delays {
            if d.matrix.rows() != n || d.matrix.cols() != n {
                return Err(Error::Dimension(format!(
                    "delay matrix is {}x{}, expected {n}x{n}",
                    d.matrix.rows(),
                    d.matrix.cols()
                )));
            }
            if !(d.h > 0.0 && d.h <= 1.0) {
                return Err(Error::Range(format!("delay h = {} is outside (0, 1]", d.h)));
            }
        }
        if b.rows() != n {
            return Err(Error::Dimension(format!("B has {} rows, expected {n}", b.rows())));
        }
        delays.sort_by(|p, q| p.h.total_cmp(&q.h));
        let omega0 = hermitian_max_eigenvalue(&a.hermitian_part())?;
        Ok(DelaySystem { a, delays, b, omega0 })
    }

    /// Single delay at `h = 1`.
    pub fn single(a: CMatrix, a1: CMatrix, b: CMatrix) -> Result<Self> {
        Self::new(a, vec![Delay { matrix: a1, h: 1.0 }], b)
    }

    /// Scalar system `z' = a z + a1 z(t-1) + b u`.
    pub fn scalar(a: f64, a1: f64, b: f64) -> Self {
        Self::single(CMatrix::scalar(a), CMatrix::scalar(a1), CMatrix::scalar(b)).expect("scalar system")
    }

    pub fn dim(&self) -> usize {
        self.a.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.cols()
    }

    pub fn a(&self) -> &CMatrix {
        &self.a
    }

    pub fn delays(&self) -> &[Delay] {
        &self.delays
    }

    pub fn b(&self) -> &CMatrix {
        &self.b
    }

    /// `max eig((A + A^*)/2)`, the growth bound certificate of `e^{tA}`.
    pub fn omega0(&self) -> f64 {
        self.omega0
    }

    pub fn is_contraction(&self) -> bool {
        self.omega0 <= CONTRACTION_TOL
    }

    pub fn require_contraction(&self) -> Result<()> {
        if self.is_contraction() {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "contraction certificate failed: max eig((A+A*)/2) = {:.6e} > {CONTRACTION_TOL:e}",
                self.omega0
            )))
        }
    }

    /// `|A_1|` of the single delay at `h = 1`; errors for other delay layouts.
    pub fn single_delay_norm(&self) -> Result<f64> {
        match self.delays.as_slice() {
            [d] if (d.h - 1.0).abs() < 1e-12 => Ok(op_norm(&d.matrix)),
            _ => Err(Error::Config("this check needs exactly one delay at h = 1".into())),
        }
    }

    /// Same `A` and `B` with every delay matrix set to zero.
    pub fn undelayed(&self) -> DelaySystem {
        let n = self.dim();
        DelaySystem {
            a: self.a.clone(),
            delays: self.delays.iter().map(|d| Delay { matrix: CMatrix::zeros(n, n), h: d.h }).collect(),
            b: self.b.clone(),
            omega0: self.omega0,
        }
    }

    pub fn with_b(&self, b: CMatrix) -> Result<DelaySystem> {
        if b.rows() != self.dim() {
            return Err(Error::Dimension(format!("B has {} rows, expected {}", b.rows(), self.dim())));
        }
        Ok(DelaySystem { b, ..self.clone() })
    }

    /// Every delay matrix multiplied by `s`.
    pub fn with_delay_scale(&self, s: f64) -> DelaySystem {
        DelaySystem {
            delays: self.delays.iter().map(|d| Delay { matrix: d.matrix.scale_real(s), h: d.h }).collect(),
            ..self.clone()
        }
    }

    fn check_state(&self, v: &LiftedState) -> Result<()> {
        if v.dim() != self.dim() {
            return Err(Error::Dimension(format!("state has dimension {}, system has {}", v.dim(), self.dim())));
        }
        Ok(())
    }
}

/// Row-compressed copy of a matrix used inside the integrator loop.
struct SparseRows {
    rows: Vec<Vec<(usize, Complex64)>>,
}

impl SparseRows {
    fn new(m: &CMatrix) -> Self {
        let rows = (0..m.rows())
            .map(|i| m.row(i).iter().enumerate().filter(|(_, z)| **z != ZERO).map(|(j, &z)| (j, z)).collect())
            .collect();
        SparseRows { rows }
    }

    fn is_zero(&self) -> bool {
        self.rows.iter().all(Vec::is_empty)
    }

    fn apply_acc(&self, x: &[Complex64], y: &mut [Complex64]) {
        for (yi, row) in y.iter_mut().zip(&self.rows) {
            for &(j, a) in row {
                *yi += a * x[j];
            }
        }
    }
}

/// A piecewise-linear input `u` on `[0, (len-1) * spacing]`, zero outside.
#[derive(Debug, Clone, PartialEq)]
pub struct InputSignal {
    pub spacing: f64,
    pub values: Vec<CVector>,
}

impl InputSignal {
    pub fn constant(value: CVector, t_end: f64, spacing: f64) -> Self {
        let count = (t_end / spacing).ceil() as usize + 1;
        InputSignal { spacing, values: vec![value; count] }
    }

    pub fn dim(&self) -> usize {
        self.values.first().map_or(0, CVector::len)
    }

    fn eval_acc(&self, t: f64, b: &SparseRows, out: &mut [Complex64]) {
        let pos = t / self.spacing;
        let last = (self.values.len() - 1) as f64;
        if pos < -NODE_SNAP || pos > last + NODE_SNAP {
            return;
        }
        let pos = pos.clamp(0.0, last);
        let k = pos.floor();
        let frac = pos - k;
        let k = k as usize;
        let mut u = self.values[k].0.clone();
        if frac > NODE_SNAP && k + 1 < self.values.len() {
            for (ui, vi) in u.iter_mut().zip(&self.values[k + 1].0) {
                *ui = *ui * (1.0 - frac) + vi * frac;
            }
        }
        b.apply_acc(&u, out);
    }
}

/// Sampled solution `z` on `[-1, t_end]`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    dt: f64,
    n: usize,
    steps: usize,
    initial: LiftedState,
    /// `z(j dt)` for `j = 0..=steps`, flattened.
    forward: Vec<Complex64>,
    input: Option<InputSignal>,
}

impl Trajectory {
    /// Trajectory from closed-form samples, mainly for checks of the history
    /// function. `z` is evaluated on `[-1, t_end]` with step `dt`; the history
    /// is stored on an `m`-cell grid.
    pub fn from_fn(dt: f64, t_end: f64, m: usize, n: usize, z: impl Fn(f64) -> CVector) -> Result<Self> {
        let steps = (t_end / dt).round() as usize;
        let history = HistorySegment::from_fn(m, n, &z)?;
        let mut forward = Vec::with_capacity((steps + 1) * n);
        for j in 0..=steps {
            let v = z(j as f64 * dt);
            if v.len() != n {
                return Err(Error::Dimension("trajectory function returned the wrong dimension".into()));
            }
            forward.extend_from_slice(&v.0);
        }
        let initial = LiftedState::new(CVector(forward[..n].to_vec()), history)?;
        Ok(Trajectory { dt, n, steps, initial, forward, input: None })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn t_end(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    pub fn initial(&self) -> &LiftedState {
        &self.initial
    }

    pub fn input(&self) -> Option<&InputSignal> {
        self.input.as_ref()
    }

    /// `z(j dt)` for `j >= 0`.
    pub fn sample(&self, j: usize) -> &[Complex64] {
        &self.forward[j * self.n..(j + 1) * self.n]
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Sample times `-1 + j dt` covering `[-1, t_end]` (nearest multiple of
    /// `dt` from below for the history part).
    pub fn times(&self) -> Vec<f64> {
        let back = (1.0 / self.dt).round() as usize;
        (0..=back + self.steps).map(|j| (j as f64 - back as f64) * self.dt).collect()
    }

    pub fn eval(&self, s: f64) -> CVector {
        let mut out = vec![ZERO; self.n];
        self.eval_into(s, &mut out);
        CVector(out)
    }

    pub fn eval_into(&self, s: f64, out: &mut [Complex64]) {
        fetch(s, self.dt, self.n, &self.forward, self.initial.tail_ref(), out);
    }

    /// History segment `z_t` on an `m`-cell grid.
    pub fn segment(&self, t: f64, m: usize) -> Result<HistorySegment> {
        if t < -NODE_SNAP * self.dt || t > self.t_end() + NODE_SNAP * self.dt {
            return Err(Error::Range(format!("t = {t} outside [0, {}]", self.t_end())));
        }
        if t.abs() <= NODE_SNAP * self.dt && m == self.initial.m() {
            return Ok(self.initial.tail.clone());
        }
        HistorySegment::from_fn(m, self.n, |sigma| self.eval(t + sigma))
    }

    /// `(z(t), z_t)`; at `t = 0` this is exactly the initial state.
    pub fn state_at(&self, t: f64) -> Result<LiftedState> {
        if t.abs() <= NODE_SNAP * self.dt {
            return Ok(self.initial.clone());
        }
        let tail = self.segment(t, self.initial.m())?;
        LiftedState::new(self.eval(t), tail)
    }

    /// CSV with header `t, re(z_1), im(z_1), ...`, one row per step on `[-1, t_end]`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for i in 1..=self.n {
            let _ = write!(out, ",re(z_{i}),im(z_{i})");
        }
        out.push('\n');
        for t in self.times() {
            let z = self.eval(t);
            out.push_str(&fmt_float(t));
            for v in z.iter() {
                let _ = write!(out, ",{},{}", fmt_float(v.re), fmt_float(v.im));
            }
            out.push('\n');
        }
        out
    }
}

impl LiftedState {
    pub(crate) fn tail_ref(&self) -> &HistorySegment {
        &self.tail
    }
}

/// Right-continuous evaluation of a partially computed trajectory.
fn fetch(s: f64, dt: f64, n: usize, forward: &[Complex64], history: &HistorySegment, out: &mut [Complex64]) {
    if s < -NODE_SNAP * dt {
        history.eval_into(s.max(-1.0), out);
        return;
    }
    let available = forward.len() / n - 1;
    let pos = (s / dt).max(0.0);
    let k = pos.floor();
    let frac = pos - k;
    let k = (k as usize).min(available);
    if frac < NODE_SNAP || k == available {
        out.copy_from_slice(&forward[k * n..(k + 1) * n]);
    } else if frac > 1.0 - NODE_SNAP {
        out.copy_from_slice(&forward[(k + 1) * n..(k + 2) * n]);
    } else {
        let (a, b) = (&forward[k * n..(k + 1) * n], &forward[(k + 1) * n..(k + 2) * n]);
        for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
            *o = x * (1.0 - frac) + y * frac;
        }
    }
}

/// Method of steps with classical RK4. Delayed values are read from the
/// stored trajectory (linear interpolation between steps) and from the
/// initial history for negative times.
pub fn simulate_steps(
    sys: &DelaySystem,
    v0: &LiftedState,
    u: Option<&InputSignal>,
    t_end: f64,
    grid: &GridSpec,
) -> Result<Trajectory> {
    sys.check_state(v0)?;
    grid.steps_per_cell()?;
    if v0.m() != grid.m {
        return Err(Error::Config(format!("initial history has m = {}, grid has m = {}", v0.m(), grid.m)));
    }
    if !(t_end > 0.0) || !t_end.is_finite() {
        return Err(Error::Range(format!("t_end must be positive, got {t_end}")));
    }
    let dt = grid.dt;
    let ratio = t_end / dt;
    let steps = ratio.round();
    if (ratio - steps).abs() > 1e-6 * ratio.max(1.0) {
        return Err(Error::Config(format!("t_end = {t_end} is not a multiple of dt = {dt}")));
    }
    let steps = steps as usize;
    for d in sys.delays() {
        if d.h < dt * (1.0 - 1e-9) {
            return Err(Error::Config(format!("delay h = {} is shorter than the step dt = {dt}", d.h)));
        }
    }
    if let Some(sig) = u {
        if sig.dim() != sys.input_dim() {
            return Err(Error::Dimension(format!(
                "input has dimension {}, B has {} columns",
                sig.dim(),
                sys.input_dim()
            )));
        }
    }

    let n = sys.dim();
    let a = SparseRows::new(sys.a());
    let delays: Vec<(SparseRows, f64)> =
        sys.delays().iter().map(|d| (SparseRows::new(&d.matrix), d.h)).filter(|(m, _)| !m.is_zero()).collect();
    let b = SparseRows::new(sys.b());
    let history = v0.tail_ref();

    let mut forward = Vec::with_capacity((steps + 1) * n);
    forward.extend_from_slice(&v0.head.0);

    let mut lag = vec![ZERO; n];
    let rhs = |t: f64, y: &[Complex64], forward: &[Complex64], lag: &mut [Complex64], out: &mut [Complex64]| {
        out.iter_mut().for_each(|o| *o = ZERO);
        a.apply_acc(y, out);
        for (ak, h) in &delays {
            fetch(t - h, dt, n, forward, history, lag);
            ak.apply_acc(lag, out);
        }
        if let Some(sig) = u {
            sig.eval_acc(t, &b, out);
        }
    };

    let (mut k1, mut k2, mut k3, mut k4) = (vec![ZERO; n], vec![ZERO; n], vec![ZERO; n], vec![ZERO; n]);
    let mut stage = vec![ZERO; n];
    let mut z = v0.head.0.clone();
    for step in 0..steps {
        let t = step as f64 * dt;
        rhs(t, &z, &forward, &mut lag, &mut k1);
        for i in 0..n {
            stage[i] = z[i] + 0.5 * dt * k1[i];
        }
        rhs(t + 0.5 * dt, &stage, &forward, &mut lag, &mut k2);
        for i in 0..n {
            stage[i] = z[i] + 0.5 * dt * k2[i];
        }
        rhs(t + 0.5 * dt, &stage, &forward, &mut lag, &mut k3);
        for i in 0..n {
            stage[i] = z[i] + dt * k3[i];
        }
        rhs(t + dt, &stage, &forward, &mut lag, &mut k4);
        for i in 0..n {
            z[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        forward.extend_from_slice(&z);
    }

    Ok(Trajectory { dt, n, steps, initial: v0.clone(), forward, input: u.cloned() })
}

/// Memo of `e^{sA}` keyed on `s` rounded to 1e-12.
struct ExpCache<'a> {
    a: &'a CMatrix,
    map: HashMap<i64, CMatrix>,
}

impl<'a> ExpCache<'a> {
    fn new(a: &'a CMatrix) -> Self {
        ExpCache { a, map: HashMap::new() }
    }

    fn get(&mut self, s: f64) -> Result<&CMatrix> {
        let key = (s * 1e12).round() as i64;
        if !self.map.contains_key(&key) {
            let e = expm(self.a, s.max(0.0))?;
            self.map.insert(key, e);
        }
        Ok(&self.map[&key])
    }
}

/// Contributions of the two lower blocks of `T0(t)`: `S_t x` and `S_0(t) f`.
#[derive(Debug, Clone)]
pub struct T0Parts {
    pub head: CVector,
    pub from_head: HistorySegment,
    pub from_tail: HistorySegment,
}

impl T0Parts {
    pub fn combined(&self) -> LiftedState {
        let values = self.from_head.values().iter().zip(self.from_tail.values()).map(|(a, b)| a + b).collect();
        LiftedState::new(self.head.clone(), HistorySegment::new(values).expect("same grid")).expect("same dimension")
    }
}

/// Block formula for `T0(t) (x, f)`: head `e^{tA} x`; tail `e^{(tau+t)A} x` for
/// `tau + t >= 0`, `f(tau + t)` for `tau + t < 0`.
pub fn apply_t0_parts(sys: &DelaySystem, t: f64, v: &LiftedState) -> Result<T0Parts> {
    sys.check_state(v)?;
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::Range(format!("t must be nonnegative, got {t}")));
    }
    let n = sys.dim();
    let m = v.m();
    let mut cache = ExpCache::new(sys.a());
    let head = CVector(cache.get(t)?.matvec(&v.head.0));
    let mut from_head = HistorySegment::zeros(m, n);
    let mut from_tail = HistorySegment::zeros(m, n);
    if t == 0.0 {
        return Ok(T0Parts { head: v.head.clone(), from_head, from_tail: v.tail.clone() });
    }
    let snap = NODE_SNAP / m as f64;
    for j in 0..=m {
        let s = v.tail.node(j) + t;
        if s >= -snap {
            let e = cache.get(s.max(0.0))?;
            from_head.value_mut(j).0 = e.matvec(&v.head.0);
        } else {
            *from_tail.value_mut(j) = v.tail.eval(s);
        }
    }
    Ok(T0Parts { head, from_head, from_tail })
}

pub fn apply_t0(sys: &DelaySystem, t: f64, v: &LiftedState) -> Result<LiftedState> {
    if t == 0.0 {
        sys.check_state(v)?;
        return Ok(v.clone());
    }
    Ok(apply_t0_parts(sys, t, v)?.combined())
}

pub const VOLTERRA_MAX_ITERS: usize = 50;

/// `T(t) v` for `t in [0, 1]` from the perturbation formula
/// `S(t)v = T0(t)v + int_0^t S(s) A_Psi T0(t-s) v ds`, iterated to a fixed point.
///
/// The iteration is carried out on the input side: with `H(s) = S(s)` restricted
/// to head inputs, `int_0^t H(s) g(t-s) ds = int_0^t H0(s) q(s) ds` where
/// `q = g(t - .) + Phi q` is a backward Volterra equation on `X`. Each Picard
/// step on `q` is one step of the original iteration. Quadrature is the
/// trapezoid rule with the grid step, jump points taking the mean value.
pub fn apply_t_volterra(sys: &DelaySystem, t: f64, v: &LiftedState, tol: f64, grid: &GridSpec) -> Result<LiftedState> {
    sys.check_state(v)?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Range(format!("Volterra path needs t in [0, 1], got {t}")));
    }
    if !v.is_in_domain() {
        return Err(Error::Domain("initial state must satisfy f(0) = x".into()));
    }
    let t0v = apply_t0(sys, t, v)?;
    if t == 0.0 {
        return Ok(t0v);
    }
    let n = sys.dim();
    let m = v.m();
    let k_steps = ((t / grid.dt) - 1e-9).ceil().max(1.0) as usize;
    let ds = t / k_steps as f64;
    let snap = NODE_SNAP * ds;
    let mut cache = ExpCache::new(sys.a());
    let half = Complex64::new(0.5, 0.0);

    // g(rho) = sum_k A_k [T0(rho) v]_tail(-h_k)
    let mut g = Vec::with_capacity(k_steps + 1);
    for l in 0..=k_steps {
        let rho = l as f64 * ds;
        let mut acc = CVector::zeros(n);
        for d in sys.delays() {
            let s = rho - d.h;
            let val = if s.abs() <= snap {
                (&v.tail.eval(0.0) + &v.head).scale(half)
            } else if s < 0.0 {
                v.tail.eval(s)
            } else {
                CVector(cache.get(s)?.matvec(&v.head.0))
            };
            acc.axpy(ONE, &CVector(d.matrix.matvec(&val.0)));
        }
        g.push(acc);
    }
    // kernel P(rho) = sum_k A_k [rho > h_k] e^{(rho - h_k) A}
    let mut kernel = Vec::with_capacity(k_steps + 1);
    for l in 0..=k_steps {
        let rho = l as f64 * ds;
        let mut p = CMatrix::zeros(n, n);
        for d in sys.delays() {
            let s = rho - d.h;
            if s.abs() <= snap {
                p.add_block(0, 0, half, &d.matrix);
            } else if s > 0.0 {
                let e = cache.get(s)?.clone();
                p.add_block(0, 0, ONE, &(&d.matrix * &e));
            }
        }
        kernel.push(p);
    }
    let kernel_active = kernel.iter().any(|p| p.norm_one() > 0.0);

    // g~(r_i) = g(t - r_i)
    let rhs: Vec<CVector> = (0..=k_steps).map(|i| g[k_steps - i].clone()).collect();
    let mut q = rhs.clone();
    let weight = |i: usize| if i == 0 || i == k_steps { 0.5 * ds } else { ds };

    let mut prev = t0v.clone();
    let mut defect = f64::INFINITY;
    for iter in 1..=VOLTERRA_MAX_ITERS {
        let current = integrate_h0(&mut cache, &t0v, &q, ds, m, &weight)?;
        defect = lifted_norm(&current.sub(&prev)?);
        if defect <= tol || (!kernel_active && iter > 1) {
            return Ok(current);
        }
        prev = current;
        if kernel_active {
            let mut next = rhs.clone();
            for i in 0..k_steps {
                let mut acc = vec![ZERO; n];
                for l in i..=k_steps {
                    let w = if l == i || l == k_steps { 0.5 * ds } else { ds };
                    let y = kernel[l - i].matvec(&q[l].0);
                    for (a, b) in acc.iter_mut().zip(&y) {
                        *a += w * b;
                    }
                }
                next[i].axpy(ONE, &CVector(acc));
            }
            q = next;
        }
    }
    Err(Error::Convergence { iterations: VOLTERRA_MAX_ITERS, defect })
}

/// `T0(t)v + int_0^t H0(s) q(s) ds` with `H0(s) y = T0(s)(y, 0)`.
fn integrate_h0(
    cache: &mut ExpCache<'_>,
    t0v: &LiftedState,
    q: &[CVector],
    ds: f64,
    m: usize,
    weight: &dyn Fn(usize) -> f64,
) -> Result<LiftedState> {
    let mut out = t0v.clone();
    let snap = NODE_SNAP * ds;
    for (i, qi) in q.iter().enumerate() {
        let s = i as f64 * ds;
        let w = weight(i);
        let e = cache.get(s)?;
        let y = e.matvec(&qi.0);
        for (o, yi) in out.head.0.iter_mut().zip(&y) {
            *o += w * yi;
        }
        for j in 0..=m {
            let u = -1.0 + j as f64 / m as f64 + s;
            let factor = if u.abs() <= snap && j < m {
                0.5
            } else if u > 0.0 || j == m {
                1.0
            } else {
                continue;
            };
            let y = if factor == 0.5 { qi.0.clone() } else { cache.get(u)?.matvec(&qi.0) };
            for (o, yi) in out.tail.value_mut(j).0.iter_mut().zip(&y) {
                *o += w * factor * yi;
            }
        }
    }
    Ok(out)
}

/// Volterra path for any `t >= 0` by composing steps of length at most one.
pub fn apply_t_volterra_composed(
    sys: &DelaySystem,
    t: f64,
    v: &LiftedState,
    tol: f64,
    grid: &GridSpec,
) -> Result<LiftedState> {
    if !(t >= 0.0) {
        return Err(Error::Range(format!("t must be nonnegative, got {t}")));
    }
    let mut state = v.clone();
    let mut remaining = t;
    while remaining > 1.0 {
        state = apply_t_volterra(sys, 1.0, &state, tol, grid)?;
        remaining -= 1.0;
    }
    apply_t_volterra(sys, remaining, &state, tol, grid)
}

/// Matrix representatives of `T(t)` for several times on full lifted
/// coordinates `[x; f_0; ...; f_m]`, one simulation per basis vector.
pub fn assemble_t_matrices(sys: &DelaySystem, ts: &[f64], grid: &GridSpec) -> Result<Vec<CMatrix>> {
    grid.steps_per_cell()?;
    if ts.iter().any(|&t| !(t >= 0.0)) {
        return Err(Error::Range("assembly times must be nonnegative".into()));
    }
    let n = sys.dim();
    let m = grid.m;
    let size = n * (m + 2);
    let t_max = ts.iter().cloned().fold(0.0, f64::max);
    let mut out = vec![CMatrix::zeros(size, size); ts.len()];
    if t_max == 0.0 {
        return Ok(vec![CMatrix::identity(size); ts.len()]);
    }
    let horizon = (t_max / grid.dt - 1e-9).ceil() * grid.dt;
    let mut coords = vec![ZERO; size];
    for c in 0..size {
        coords[c] = ONE;
        let v = LiftedState::from_coords(n, m, &coords)?;
        coords[c] = ZERO;
        let traj = simulate_steps(sys, &v, None, horizon, grid)?;
        for (mat, &t) in out.iter_mut().zip(ts) {
            mat.set_column(c, &traj.state_at(t)?.to_coords());
        }
    }
    Ok(out)
}

pub fn assemble_t_matrix(sys: &DelaySystem, t: f64, grid: &GridSpec) -> Result<CMatrix> {
    Ok(assemble_t_matrices(sys, &[t], grid)?.remove(0))
}

/// Operator norm on the lifted space of a matrix on full lifted coordinates.
pub fn lifted_operator_norm(t: &CMatrix, n: usize, m: usize) -> f64 {
    let w = lifted_weights(n, m);
    weighted_op_norm(t, &w, &w)
}

/// `max_v |T(t+s)v - T(t)T(s)v| / |v|` over the canonical basis.
pub fn semigroup_defect(sys: &DelaySystem, t: f64, s: f64, grid: &GridSpec) -> Result<f64> {
    let mats = assemble_t_matrices(sys, &[t, s, t + s], grid)?;
    let composed = &mats[0] * &mats[1];
    let diff = &mats[2] - &composed;
    let w = lifted_weights(sys.dim(), grid.m);
    let mut worst = 0.0f64;
    for c in 0..diff.cols() {
        let col: f64 = (0..diff.rows()).map(|r| w[r] * diff[(r, c)].norm_sqr()).sum();
        worst = worst.max((col / w[c]).sqrt());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::delay_state::inner;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar_state(x: f64, m: usize, f: impl Fn(f64) -> f64) -> LiftedState {
        LiftedState::new(CVector::from_real(&[x]), HistorySegment::scalar_fn(m, f)).unwrap()
    }

    fn re(v: &CVector) -> f64 {
        v[0].re
    }

    #[test]
    fn t0_identity_at_zero() {
        let sys = DelaySystem::scalar(-1.0, 0.5, 0.0);
        let v = scalar_state(2.0, 20, |s| s * s);
        assert_eq!(apply_t0(&sys, 0.0, &v).unwrap(), v);
    }

    #[test]
    fn t0_scalar_decay_closed_form() {
        let sys = DelaySystem::scalar(-1.0, 0.0, 0.0);
        let v = scalar_state(1.0, 200, |_| 0.0);
        let out = apply_t0(&sys, 0.5, &v).unwrap();
        assert!((re(&out.head) - (-0.5f64).exp()).abs() < 1e-14);
        for j in 0..=200 {
            let tau = -1.0 + j as f64 / 200.0;
            let expected = if tau >= -0.5 { (-(tau + 0.5)).exp() } else { 0.0 };
            assert!((re(out.tail.value(j)) - expected).abs() < 1e-13, "node {j}");
        }
        let sq = lifted_norm(&out).powi(2);
        let exact = (-1.0f64).exp() + (1.0 - (-1.0f64).exp()) / 2.0;
        assert!((exact - 0.68394).abs() < 1e-5);
        // the node at tau = -t carries the jump, an O(1/m) quadrature effect
        assert!((sq - exact).abs() < 2.0 / 200.0, "{sq} vs {exact}");
    }

    #[test]
    fn t0_is_nilpotent_on_tails() {
        let sys = DelaySystem::scalar(0.3, 0.0, 0.0);
        let v = scalar_state(0.0, 50, |s| 1.0 + s.sin());
        let parts = apply_t0_parts(&sys, 1.5, &v).unwrap();
        assert!(parts.from_tail.values().iter().all(|x| x.iter().all(|z| *z == ZERO)));
        let out = parts.combined();
        assert_eq!(re(&out.head), 0.0);
        assert!(out.tail.values().iter().all(|x| x[0] == ZERO));
    }

    #[test]
    fn t0_cross_term_vanishes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = CMatrix::from_real_rows(&[vec![-1.0, 0.5], vec![-0.5, -0.2]]).unwrap();
        let sys = DelaySystem::single(a, CMatrix::zeros(2, 2), CMatrix::zeros(2, 1)).unwrap();
        for &t in &[0.1, 0.37, 0.5, 0.99, 1.3] {
            let coords: Vec<Complex64> =
                (0..2 * 42).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
            let v = LiftedState::from_coords(2, 40, &coords).unwrap();
            let p = apply_t0_parts(&sys, t, &v).unwrap();
            let cross = p.from_head.inner(&p.from_tail).unwrap().norm();
            assert!(cross <= 1e-10 * v.head.norm() * v.tail.l2_norm());
        }
    }

    #[test]
    fn t0_rejects_negative_time() {
        let sys = DelaySystem::scalar(0.0, 0.0, 0.0);
        assert!(matches!(apply_t0(&sys, -0.1, &scalar_state(1.0, 4, |_| 1.0)), Err(Error::Range(_))));
    }

    #[test]
    fn steps_scalar_delay_oracle() {
        let sys = DelaySystem::scalar(0.0, 1.0, 0.0);
        let v = scalar_state(1.0, 200, |_| 1.0);
        let traj = simulate_steps(&sys, &v, None, 2.0, &GridSpec::with_dt(200, 1e-3)).unwrap();
        assert!((re(&traj.eval(1.0)) - 2.0).abs() < 1e-10);
        assert!((re(&traj.eval(2.0)) - 3.5).abs() < 1e-10);
    }

    #[test]
    fn steps_undelayed_matches_expm() {
        let a = CMatrix::from_real_rows(&[vec![-0.5, 1.0], vec![-1.0, -0.3]]).unwrap();
        let sys = DelaySystem::single(a.clone(), CMatrix::zeros(2, 2), CMatrix::zeros(2, 1)).unwrap();
        let x = CVector::from_real(&[1.0, -2.0]);
        let v = LiftedState::new(x.clone(), HistorySegment::zeros(200, 2)).unwrap();
        let traj = simulate_steps(&sys, &v, None, 1.5, &GridSpec::with_dt(200, 1e-3)).unwrap();
        let exact = expm(&a, 1.5).unwrap().matvec(&x.0);
        assert!(norm_diff(&traj.eval(1.5).0, &exact) < 1e-6);
    }

    #[test]
    fn steps_forced_response() {
        let sys = DelaySystem::scalar(-1.0, 0.0, 1.0);
        let v = scalar_state(0.0, 200, |_| 0.0);
        let u = InputSignal::constant(CVector::from_real(&[1.0]), 1.0, 1e-3);
        let traj = simulate_steps(&sys, &v, Some(&u), 1.0, &GridSpec::with_dt(200, 1e-3)).unwrap();
        assert!((re(&traj.eval(1.0)) - (1.0 - (-1.0f64).exp())).abs() < 1e-6);
    }

    #[test]
    fn steps_rejects_incompatible_grid() {
        let sys = DelaySystem::scalar(0.0, 1.0, 0.0);
        let v = scalar_state(1.0, 200, |_| 1.0);
        let r = simulate_steps(&sys, &v, None, 1.0, &GridSpec::with_dt(200, 3e-3));
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn steps_second_order_under_refinement() {
        // history with a smooth, non-polynomial profile forces interpolation error
        let sys = DelaySystem::scalar(-0.5, 0.8, 0.0);
        let run = |m: usize| {
            let v = scalar_state(1.0, m, |s| (2.0 * s).cos());
            let traj = simulate_steps(&sys, &v, None, 2.0, &GridSpec::new(m)).unwrap();
            re(&traj.eval(2.0))
        };
        let (a, b, c) = (run(25), run(50), run(100));
        let order = ((a - b) / (b - c)).abs().log2();
        assert!(order >= 1.9, "observed order {order}");
    }

    fn norm_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt()
    }

    #[test]
    fn volterra_reduces_to_t0_without_delay() {
        let a = CMatrix::from_real_rows(&[vec![-1.0, 0.4], vec![-0.4, -0.1]]).unwrap();
        let sys = DelaySystem::single(a, CMatrix::zeros(2, 2), CMatrix::zeros(2, 1)).unwrap();
        let x = CVector::from_real(&[1.0, 0.5]);
        let tail = HistorySegment::from_fn(40, 2, |s| CVector::from_real(&[1.0 + s, 0.5 * (1.0 + 2.0 * s)])).unwrap();
        let v = LiftedState::new(x, tail).unwrap();
        let a = apply_t_volterra(&sys, 0.6, &v, 1e-12, &GridSpec::new(40)).unwrap();
        let b = apply_t0(&sys, 0.6, &v).unwrap();
        assert!(lifted_norm(&a.sub(&b).unwrap()) < 1e-12);
    }

    #[test]
    fn volterra_scalar_cross_check() {
        let sys = DelaySystem::scalar(0.0, 1.0, 0.0);
        let v = scalar_state(1.0, 200, |_| 1.0);
        let out = apply_t_volterra(&sys, 0.5, &v, 1e-12, &GridSpec::with_dt(200, 1e-3)).unwrap();
        assert!((re(&out.head) - 1.5).abs() < 1e-4);
    }

    #[test]
    fn volterra_multi_delay_matches_steps() {
        let a = CMatrix::from_real_rows(&[vec![-0.7, 0.3], vec![-0.3, -0.4]]).unwrap();
        let delays = vec![
            Delay { matrix: CMatrix::from_real_rows(&[vec![0.2, 0.1], vec![0.0, -0.3]]).unwrap(), h: 0.25 },
            Delay { matrix: CMatrix::from_real_rows(&[vec![0.1, 0.0], vec![0.2, 0.1]]).unwrap(), h: 1.0 },
        ];
        let sys = DelaySystem::new(a, delays, CMatrix::zeros(2, 1)).unwrap();
        let grid = GridSpec::with_dt(100, 1e-3);
        let tail = HistorySegment::from_fn(100, 2, |s| CVector::from_real(&[s.cos(), (1.0 + s).exp() * 0.5])).unwrap();
        let v = LiftedState::new(tail.eval(0.0), tail).unwrap();
        for &t in &[0.3, 0.8, 1.0] {
            let vol = apply_t_volterra(&sys, t, &v, 1e-12, &grid).unwrap();
            let steps = simulate_steps(&sys, &v, None, t, &grid).unwrap().state_at(t).unwrap();
            assert!(norm_diff(&vol.head.0, &steps.head.0) < 1e-4, "t = {t}");
            for j in 0..=100 {
                assert!(norm_diff(&vol.tail.value(j).0, &steps.tail.value(j).0) < 1e-3);
            }
        }
    }

    #[test]
    fn volterra_range_and_domain_errors() {
        let sys = DelaySystem::scalar(0.0, 1.0, 0.0);
        let grid = GridSpec::new(10);
        let v = scalar_state(1.0, 10, |_| 1.0);
        assert!(matches!(apply_t_volterra(&sys, 1.5, &v, 1e-10, &grid), Err(Error::Range(_))));
        let off = scalar_state(2.0, 10, |_| 1.0);
        assert!(matches!(apply_t_volterra(&sys, 0.5, &off, 1e-10, &grid), Err(Error::Domain(_))));
    }

    #[test]
    fn volterra_composed_beyond_one() {
        let sys = DelaySystem::scalar(0.0, 1.0, 0.0);
        let grid = GridSpec::with_dt(200, 1e-3);
        let v = scalar_state(1.0, 200, |_| 1.0);
        let out = apply_t_volterra_composed(&sys, 2.0, &v, 1e-12, &grid).unwrap();
        assert!((re(&out.head) - 3.5).abs() < 1e-3);
    }

    #[test]
    fn assembly_at_zero_is_identity() {
        let sys = DelaySystem::scalar(-1.0, 1.0, 0.0);
        let t = assemble_t_matrix(&sys, 0.0, &GridSpec::new(10)).unwrap();
        assert_eq!(t, CMatrix::identity(12));
    }

    #[test]
    fn assembly_head_block_is_expm_without_delay() {
        let a = CMatrix::from_real_rows(&[vec![-1.0, 2.0], vec![-2.0, -0.5]]).unwrap();
        let sys = DelaySystem::single(a.clone(), CMatrix::zeros(2, 2), CMatrix::zeros(2, 1)).unwrap();
        let grid = GridSpec::new(200);
        let t = assemble_t_matrix(&sys, 0.7, &grid).unwrap();
        let e = expm(&a, 0.7).unwrap();
        assert!(t.block(0, 0, 2, 2).max_abs_diff(&e) < 1e-8);
    }

    #[test]
    fn assembled_shift_norm_is_sqrt_one_plus_t() {
        let sys = DelaySystem::scalar(0.0, 0.0, 0.0);
        let grid = GridSpec::new(200);
        let ts = [0.25, 0.5, 1.0];
        let mats = assemble_t_matrices(&sys, &ts, &grid).unwrap();
        for (mat, t) in mats.iter().zip(ts) {
            let norm = lifted_operator_norm(mat, 1, 200);
            assert!((norm / (1.0 + t).sqrt() - 1.0).abs() < 0.02, "t = {t}: {norm}");
        }
    }

    #[test]
    fn defect_small_cases() {
        let grid = GridSpec::new(20);
        let sys = DelaySystem::scalar(-0.5, 0.0, 0.0);
        assert!(semigroup_defect(&sys, 0.3, 0.2, &grid).unwrap() < 1e-8);
        let sys = DelaySystem::scalar(0.0, 1.0, 0.0);
        assert!(semigroup_defect(&sys, 0.0, 0.4, &grid).unwrap() <= 1e-12);
        assert!(semigroup_defect(&sys, 0.4, 0.0, &grid).unwrap() <= 1e-12);
    }

    #[test]
    fn csv_layout() {
        let sys = DelaySystem::scalar(0.0, 1.0, 0.0);
        let v = scalar_state(1.0, 4, |_| 1.0);
        let traj = simulate_steps(&sys, &v, None, 0.25, &GridSpec::new(4)).unwrap();
        let csv = traj.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "t,re(z_1),im(z_1)");
        assert_eq!(csv.lines().count(), 1 + traj.times().len());
        assert!(csv.lines().last().unwrap().starts_with("2.5000000000000000e-1,1.2500000000000000e0"));
    }

    #[test]
    fn inner_of_state_at_is_consistent() {
        let sys = DelaySystem::scalar(-0.2, 0.5, 0.0);
        let v = scalar_state(1.0, 20, |s| 1.0 + s);
        let traj = simulate_steps(&sys, &v, None, 0.5, &GridSpec::new(20)).unwrap();
        let st = traj.state_at(0.5).unwrap();
        assert!((inner(&st, &st).unwrap().re.sqrt() - lifted_norm(&st)).abs() < 1e-14);
    }
}
