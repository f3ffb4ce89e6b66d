//! Discretized lifted generator and its adjoint.
//!
//! The generator acts on `(x, f)` with `f(0) = x`; the tail derivative is an
//! upwind forward difference toward `sigma = 0`. The adjoint acts on `(y, g)`
//! with `g(-1) = g(0) = 0` and uses the mirrored backward difference; the
//! point evaluations `f(-h_k)` become nodal injections scaled by the inverse
//! quadrature weight.

use std::fmt::Write as _;

use num_complex::Complex64;
use rand::Rng;

use crate::delay_state::HistorySegment;
use crate::delay_state::{lifted_weights, trapezoid_weights, GridSpec, LiftedState};
use crate::error::{Error, Result};
use crate::numkernel::{CMatrix, CVector, ONE};
use crate::output::fmt_float;
use crate::semigroup::DelaySystem;

const BOUNDARY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundarySpec {
    /// `f(0) = x`, the `f_m` coordinate is fused with the head.
    Compatibility,
    /// `g(-1) = g(0) = 0`, both end nodes are dropped.
    Dirichlet,
}

#[derive(Debug, Clone)]
pub struct DiscreteGenerator {
    n: usize,
    m: usize,
    boundary: BoundarySpec,
    /// Square matrix on reduced coordinates.
    matrix: CMatrix,
    /// Quadrature weights on reduced coordinates.
    metric: Vec<f64>,
    /// The same operator on full lifted coordinates `[x; f_0; ...; f_m]`.
    full: CMatrix,
}

impl DiscreteGenerator {
    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn metric(&self) -> &[f64] {
        &self.metric
    }

    pub fn full(&self) -> &CMatrix {
        &self.full
    }

    pub fn boundary(&self) -> BoundarySpec {
        self.boundary
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Full lifted-coordinate indices kept by the reduction, in order.
    pub fn kept_indices(&self) -> Vec<usize> {
        let (n, m) = (self.n, self.m);
        let tail = |j: usize| (n * (j + 1))..(n * (j + 2));
        let mut idx: Vec<usize> = (0..n).collect();
        match self.boundary {
            BoundarySpec::Compatibility => (0..m).for_each(|j| idx.extend(tail(j))),
            BoundarySpec::Dirichlet => (1..m).for_each(|j| idx.extend(tail(j))),
        }
        idx
    }

    pub fn reduce(&self, v: &LiftedState) -> Vec<Complex64> {
        let c = v.to_coords();
        self.kept_indices().into_iter().map(|i| c[i]).collect()
    }

    /// Reduced coordinates back to a lifted state; eliminated nodes are
    /// restored from the boundary condition.
    pub fn expand(&self, r: &[Complex64]) -> Result<LiftedState> {
        let (n, m) = (self.n, self.m);
        let mut c = vec![Complex64::new(0.0, 0.0); n * (m + 2)];
        for (k, i) in self.kept_indices().into_iter().enumerate() {
            c[i] = r[k];
        }
        if self.boundary == BoundarySpec::Compatibility {
            let (head, rest) = c.split_at_mut(n);
            rest[n * m..n * (m + 1)].copy_from_slice(head);
        }
        LiftedState::from_coords(n, m, &c)
    }

    /// Reduced-coordinate matrix in the metric-orthonormal frame, so Euclidean
    /// quantities equal lifted-space quantities.
    pub fn orthonormal_matrix(&self) -> CMatrix {
        self.matrix.weighted(&self.metric, &self.metric)
    }
}

/// Interpolation stencil of `f(-h)` on the `m`-cell grid: `(node, weight)` pairs.
fn point_stencil(h: f64, m: usize) -> Vec<(usize, f64)> {
    let pos = (1.0 - h) * m as f64;
    let p = pos.floor();
    let frac = pos - p;
    let p = p as usize;
    if frac < 1e-9 || p >= m {
        vec![(p.min(m), 1.0)]
    } else if frac > 1.0 - 1e-9 {
        vec![(p + 1, 1.0)]
    } else {
        vec![(p, 1.0 - frac), (p + 1, frac)]
    }
}

fn check_grid(grid: &GridSpec) -> Result<()> {
    if grid.m < 2 {
        return Err(Error::Config(format!("grid needs m >= 2, got {}", grid.m)));
    }
    Ok(())
}

/// `[A, Psi_h; 0, D]` with the `f_m` node fused into the head.
pub fn assemble_generator(sys: &DelaySystem, grid: &GridSpec) -> Result<DiscreteGenerator> {
    check_grid(grid)?;
    let n = sys.dim();
    let m = grid.m;
    let size = n * (m + 2);
    let inv_h = m as f64;
    let col = |j: usize| if j == m { 0 } else { n * (j + 1) };
    let mut full = CMatrix::zeros(size, size);
    full.add_block(0, 0, ONE, sys.a());
    for d in sys.delays() {
        for (node, w) in point_stencil(d.h, m) {
            full.add_block(0, col(node), Complex64::new(w, 0.0), &d.matrix);
        }
    }
    let id = CMatrix::identity(n);
    for j in 0..=m {
        let row = n * (j + 1);
        let (lo, hi) = if j < m { (j, j + 1) } else { (m - 1, m) };
        full.add_block(row, col(hi), Complex64::new(inv_h, 0.0), &id);
        full.add_block(row, col(lo), Complex64::new(-inv_h, 0.0), &id);
    }
    let mut g = DiscreteGenerator {
        n,
        m,
        boundary: BoundarySpec::Compatibility,
        matrix: CMatrix::zeros(0, 0),
        metric: Vec::new(),
        full,
    };
    let kept = g.kept_indices();
    g.matrix = submatrix(&g.full, &kept);
    let w = trapezoid_weights(m);
    let mut metric = vec![1.0 + w[m]; n];
    for wj in &w[..m] {
        metric.extend(std::iter::repeat_n(*wj, n));
    }
    g.metric = metric;
    Ok(g)
}

/// `[A^*, 0; Psi_h^*, -D]` with `g(-1) = g(0) = 0`.
pub fn assemble_adjoint(sys: &DelaySystem, grid: &GridSpec) -> Result<DiscreteGenerator> {
    check_grid(grid)?;
    let n = sys.dim();
    let m = grid.m;
    let size = n * (m + 2);
    let inv_h = m as f64;
    let w = trapezoid_weights(m);
    let mut full = CMatrix::zeros(size, size);
    full.add_block(0, 0, ONE, &sys.a().adjoint());
    for d in sys.delays() {
        let adj = d.matrix.adjoint();
        for (node, c) in point_stencil(d.h, m) {
            full.add_block(n * (node + 1), 0, Complex64::new(c / w[node], 0.0), &adj);
        }
    }
    let id = CMatrix::identity(n);
    for j in 0..=m {
        let row = n * (j + 1);
        full.add_block(row, row, Complex64::new(-inv_h, 0.0), &id);
        if j > 0 {
            full.add_block(row, row - n, Complex64::new(inv_h, 0.0), &id);
        }
    }
    let mut g = DiscreteGenerator {
        n,
        m,
        boundary: BoundarySpec::Dirichlet,
        matrix: CMatrix::zeros(0, 0),
        metric: Vec::new(),
        full,
    };
    let kept = g.kept_indices();
    g.matrix = submatrix(&g.full, &kept);
    let mut metric = vec![1.0; n];
    for wj in &w[1..m] {
        metric.extend(std::iter::repeat_n(*wj, n));
    }
    g.metric = metric;
    Ok(g)
}

fn submatrix(full: &CMatrix, idx: &[usize]) -> CMatrix {
    let k = idx.len();
    let mut out = CMatrix::zeros(k, k);
    for (r, &i) in idx.iter().enumerate() {
        for (c, &j) in idx.iter().enumerate() {
            out[(r, c)] = full[(i, j)];
        }
    }
    out
}

fn apply_full(op: &CMatrix, v: &LiftedState) -> Result<LiftedState> {
    LiftedState::from_coords(v.dim(), v.m(), &op.matvec(&v.to_coords()))
}

fn metric_inner(a: &[Complex64], b: &[Complex64], w: &[f64]) -> Complex64 {
    a.iter().zip(b).zip(w).map(|((x, y), wi)| x * y.conj() * *wi).sum()
}

/// `|<A_h v, w> - <v, A_h^* w>|`, after checking `f(0) = x` and `g(-1) = g(0) = 0`.
pub fn pairing_defect(sys: &DelaySystem, grid: &GridSpec, v: &LiftedState, w: &LiftedState) -> Result<f64> {
    if v.dim() != sys.dim() || w.dim() != sys.dim() || v.m() != grid.m || w.m() != grid.m {
        return Err(Error::Dimension("pairing states must match the system and grid".into()));
    }
    if !v.is_in_domain() {
        return Err(Error::Domain("v violates the compatibility condition f(0) = x".into()));
    }
    let scale = BOUNDARY_TOL * (1.0 + w.head.norm());
    if w.tail.value(0).norm() > scale {
        return Err(Error::Domain("w violates the boundary condition g(-1) = 0".into()));
    }
    if w.tail.value(grid.m).norm() > scale {
        return Err(Error::Domain("w violates the boundary condition g(0) = 0".into()));
    }
    pairing_defect_unchecked(sys, grid, v, w)
}

/// Pairing defect without boundary checks, for probing boundary necessity.
pub fn pairing_defect_unchecked(sys: &DelaySystem, grid: &GridSpec, v: &LiftedState, w: &LiftedState) -> Result<f64> {
    let gen = assemble_generator(sys, grid)?;
    let adj = assemble_adjoint(sys, grid)?;
    let metric = lifted_weights(sys.dim(), grid.m);
    let av = apply_full(gen.full(), v)?.to_coords();
    let aw = apply_full(adj.full(), w)?.to_coords();
    let lhs = metric_inner(&av, &w.to_coords(), &metric);
    let rhs = metric_inner(&v.to_coords(), &aw, &metric);
    Ok((lhs - rhs).norm())
}

/// A smooth pair `v = (f(0), f)`, `w = (y, g)` with `g(-1) = g(0) = 0`, given
/// by polynomial and trigonometric coefficients so it can be sampled on any grid.
#[derive(Debug, Clone)]
pub struct SmoothPair {
    poly: [CVector; 3],
    wave: CVector,
    y: CVector,
    bump: [CVector; 2],
}

impl SmoothPair {
    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut v =
            || CVector((0..n).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect());
        SmoothPair { poly: [v(), v(), v()], wave: v(), y: v(), bump: [v(), v()] }
    }

    pub fn f(&self, sigma: f64) -> CVector {
        let s = std::f64::consts::PI * sigma;
        let mut out = self.poly[0].clone();
        out.axpy(Complex64::new(sigma, 0.0), &self.poly[1]);
        out.axpy(Complex64::new(sigma * sigma, 0.0), &self.poly[2]);
        out.axpy(Complex64::new(s.sin(), 0.0), &self.wave);
        out
    }

    pub fn g(&self, sigma: f64) -> CVector {
        let base = sigma * (sigma + 1.0);
        let mut out = self.bump[0].scale(Complex64::new(base, 0.0));
        out.axpy(Complex64::new(base * sigma, 0.0), &self.bump[1]);
        out
    }

    pub fn sample(&self, m: usize) -> Result<(LiftedState, LiftedState)> {
        let n = self.y.len();
        let f = HistorySegment::from_fn(m, n, |s| self.f(s))?;
        let mut g = HistorySegment::from_fn(m, n, |s| self.g(s))?;
        *g.value_mut(0) = CVector::zeros(n);
        *g.value_mut(m) = CVector::zeros(n);
        let x = f.value(m).clone();
        Ok((LiftedState::new(x, f)?, LiftedState::new(self.y.clone(), g)?))
    }
}

/// Dense CSV dump, one matrix row per line, `re,im` pairs per entry.
pub fn matrix_csv(m: &CMatrix) -> String {
    let mut out = String::new();
    for i in 0..m.rows() {
        for (j, z) in m.row(i).iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{},{}", fmt_float(z.re), fmt_float(z.im));
        }
        out.push('\n');
    }
    out
}
