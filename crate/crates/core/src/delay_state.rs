//! The lifted state space `X x L^2([-1,0], X)`: gridded history segments,
//! the product inner product and the history-function shift check.
//!
//! A history segment stores values at the uniform nodes `sigma_j = -1 + j/m`,
//! `j = 0..=m`. Point evaluation between nodes is linear interpolation and
//! the `L^2` part of the inner product is the composite trapezoid rule, so
//! affine tails are integrated exactly.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkernel::{dot, CVector, ZERO};
use crate::semigroup::Trajectory;

/// Snapping tolerance, in units of a grid cell, for "is this on a node".
pub(crate) const NODE_SNAP: f64 = 1e-9;

/// History and time discretization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Number of history cells on `[-1, 0]`.
    pub m: usize,
    /// Time step of the integrator; must divide `1/m`.
    pub dt: f64,
}

impl GridSpec {
    pub const DEFAULT_M: usize = 200;

    /// Grid with the default step `dt = 1/(2m)`.
    pub fn new(m: usize) -> Self {
        GridSpec { m, dt: 1.0 / (2.0 * m as f64) }
    }

    pub fn with_dt(m: usize, dt: f64) -> Self {
        GridSpec { m, dt }
    }

    /// The grid with both `m` and the step count per cell doubled.
    pub fn refined(&self) -> Self {
        GridSpec { m: 2 * self.m, dt: self.dt / 2.0 }
    }

    pub fn cell(&self) -> f64 {
        1.0 / self.m as f64
    }

    /// Integrator steps per history cell, or a config error if `dt` does not
    /// divide `1/m`.
    pub fn steps_per_cell(&self) -> Result<usize> {
        if self.m == 0 {
            return Err(Error::Config("history grid needs m >= 1".into()));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Config(format!("time step must be positive, got {}", self.dt)));
        }
        let ratio = self.cell() / self.dt;
        let k = ratio.round();
        if k < 1.0 || (ratio - k).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::Config(format!(
                "dt = {} does not divide the history cell 1/m = {} (m = {})",
                self.dt,
                self.cell(),
                self.m
            )));
        }
        Ok(k as usize)
    }

    pub fn node(&self, j: usize) -> f64 {
        -1.0 + j as f64 / self.m as f64
    }

    pub fn weights(&self) -> Vec<f64> {
        trapezoid_weights(self.m)
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::new(Self::DEFAULT_M)
    }
}

/// Trapezoid weights `(1/m) * (1/2, 1, ..., 1, 1/2)` on `m + 1` nodes.
pub fn trapezoid_weights(m: usize) -> Vec<f64> {
    let h = 1.0 / m as f64;
    let mut w = vec![h; m + 1];
    w[0] = 0.5 * h;
    w[m] = 0.5 * h;
    w
}

/// Metric weights on full lifted coordinates `[x; f_0; ...; f_m]`.
pub fn lifted_weights(n: usize, m: usize) -> Vec<f64> {
    let mut w = vec![1.0; n];
    for wj in trapezoid_weights(m) {
        w.extend(std::iter::repeat_n(wj, n));
    }
    w
}

/// A function `[-1, 0] -> X` sampled at `m + 1` uniform nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct HistorySegment {
    m: usize,
    dim: usize,
    values: Vec<CVector>,
}

impl HistorySegment {
    pub fn new(values: Vec<CVector>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::Dimension("history segment needs at least two nodes".into()));
        }
        let dim = values[0].len();
        if dim == 0 || values.iter().any(|v| v.len() != dim) {
            return Err(Error::Dimension("history node values must share a positive dimension".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Range("history values must be finite".into()));
        }
        Ok(HistorySegment { m: values.len() - 1, dim, values })
    }

    pub fn zeros(m: usize, dim: usize) -> Self {
        HistorySegment { m, dim, values: vec![CVector::zeros(dim); m + 1] }
    }

    pub fn from_fn(m: usize, dim: usize, f: impl Fn(f64) -> CVector) -> Result<Self> {
        let values = (0..=m).map(|j| f(-1.0 + j as f64 / m as f64)).collect::<Vec<_>>();
        if values.iter().any(|v| v.len() != dim) {
            return Err(Error::Dimension("history function returned the wrong dimension".into()));
        }
        Self::new(values)
    }

    /// Scalar history from a real function.
    pub fn scalar_fn(m: usize, f: impl Fn(f64) -> f64) -> Self {
        Self::from_fn(m, 1, |s| CVector::from_real(&[f(s)])).expect("scalar history")
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[CVector] {
        &self.values
    }

    pub fn value(&self, j: usize) -> &CVector {
        &self.values[j]
    }

    pub fn value_mut(&mut self, j: usize) -> &mut CVector {
        &mut self.values[j]
    }

    pub fn node(&self, j: usize) -> f64 {
        -1.0 + j as f64 / self.m as f64
    }

    /// Linear interpolation at `sigma in [-1, 0]`.
    pub fn eval(&self, sigma: f64) -> CVector {
        let mut out = vec![ZERO; self.dim];
        self.eval_into(sigma, &mut out);
        CVector(out)
    }

    pub fn eval_into(&self, sigma: f64, out: &mut [Complex64]) {
        let pos = ((sigma + 1.0) * self.m as f64).clamp(0.0, self.m as f64);
        let k = pos.floor();
        let frac = pos - k;
        let k = k as usize;
        if frac < NODE_SNAP || k >= self.m {
            out.copy_from_slice(&self.values[k.min(self.m)].0);
        } else if frac > 1.0 - NODE_SNAP {
            out.copy_from_slice(&self.values[k + 1].0);
        } else {
            let (a, b) = (&self.values[k].0, &self.values[k + 1].0);
            for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
                *o = x * (1.0 - frac) + y * frac;
            }
        }
    }

    /// Trapezoid approximation of `<f, g>_{L^2([-1,0], X)}`.
    pub fn inner(&self, other: &HistorySegment) -> Result<Complex64> {
        if self.m != other.m || self.dim != other.dim {
            return Err(Error::Dimension(format!(
                "history grids differ: (m={}, n={}) vs (m={}, n={})",
                self.m, self.dim, other.m, other.dim
            )));
        }
        let w = trapezoid_weights(self.m);
        Ok(self.values.iter().zip(&other.values).zip(&w).map(|((a, b), &wj)| a.dot(b) * wj).sum())
    }

    pub fn l2_norm(&self) -> f64 {
        let w = trapezoid_weights(self.m);
        self.values.iter().zip(&w).map(|(v, wj)| wj * v.norm().powi(2)).sum::<f64>().sqrt()
    }
}

/// A state `(x, f)` of the lifted space.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedState {
    pub head: CVector,
    pub tail: HistorySegment,
}

impl LiftedState {
    pub fn new(head: CVector, tail: HistorySegment) -> Result<Self> {
        if head.len() != tail.dim() {
            return Err(Error::Dimension(format!(
                "head has dimension {} but tail values have dimension {}",
                head.len(),
                tail.dim()
            )));
        }
        Ok(LiftedState { head, tail })
    }

    pub fn zeros(n: usize, m: usize) -> Self {
        LiftedState { head: CVector::zeros(n), tail: HistorySegment::zeros(m, n) }
    }

    pub fn dim(&self) -> usize {
        self.head.len()
    }

    pub fn m(&self) -> usize {
        self.tail.m()
    }

    /// Full coordinates `[x; f_0; ...; f_m]`.
    pub fn to_coords(&self) -> Vec<Complex64> {
        let mut c = self.head.0.clone();
        for v in self.tail.values() {
            c.extend_from_slice(&v.0);
        }
        c
    }

    pub fn from_coords(n: usize, m: usize, coords: &[Complex64]) -> Result<Self> {
        if coords.len() != n * (m + 2) {
            return Err(Error::Dimension(format!(
                "expected {} lifted coordinates for n={n}, m={m}, got {}",
                n * (m + 2),
                coords.len()
            )));
        }
        let head = CVector(coords[..n].to_vec());
        let values = coords[n..].chunks(n).map(|c| CVector(c.to_vec())).collect();
        Ok(LiftedState { head, tail: HistorySegment { m, dim: n, values } })
    }

    /// `f(0) = x` up to `1e-8 * (1 + |x|)`.
    pub fn is_in_domain(&self) -> bool {
        let gap = (&self.tail.values[self.tail.m] - &self.head).norm();
        gap <= 1e-8 * (1.0 + self.head.norm())
    }

    pub fn scale(&self, s: Complex64) -> LiftedState {
        LiftedState {
            head: self.head.scale(s),
            tail: HistorySegment {
                m: self.tail.m,
                dim: self.tail.dim,
                values: self.tail.values.iter().map(|v| v.scale(s)).collect(),
            },
        }
    }

    pub fn add(&self, other: &LiftedState) -> Result<LiftedState> {
        check_compatible(self, other)?;
        Ok(LiftedState {
            head: &self.head + &other.head,
            tail: HistorySegment {
                m: self.tail.m,
                dim: self.tail.dim,
                values: self.tail.values.iter().zip(&other.tail.values).map(|(a, b)| a + b).collect(),
            },
        })
    }

    pub fn sub(&self, other: &LiftedState) -> Result<LiftedState> {
        self.add(&other.scale(Complex64::new(-1.0, 0.0)))
    }
}

fn check_compatible(v: &LiftedState, w: &LiftedState) -> Result<()> {
    if v.dim() != w.dim() || v.m() != w.m() {
        return Err(Error::Dimension(format!(
            "lifted states differ: (n={}, m={}) vs (n={}, m={})",
            v.dim(),
            v.m(),
            w.dim(),
            w.m()
        )));
    }
    Ok(())
}

/// `<x, y>_X + <f, g>_{L^2}` with the trapezoid rule on the tail.
pub fn inner(v: &LiftedState, w: &LiftedState) -> Result<Complex64> {
    check_compatible(v, w)?;
    Ok(dot(&v.head.0, &w.head.0) + v.tail.inner(&w.tail)?)
}

pub fn lifted_norm(v: &LiftedState) -> f64 {
    let w = trapezoid_weights(v.m());
    let tail: f64 =
        v.tail.values.iter().zip(&w).map(|(f, wj)| wj * f.0.iter().map(|z| z.norm_sqr()).sum::<f64>()).sum();
    (v.head.0.iter().map(|z| z.norm_sqr()).sum::<f64>() + tail).sqrt()
}

/// `|(h_z(t+dt) - h_z(t))/dt - d/dsigma z_t|_{L^2}` on an `m`-cell history grid.
///
/// The sigma-derivative uses centered differences at interior nodes and
/// one-sided differences at the two ends.
pub fn history_shift_defect(traj: &Trajectory, t: f64, dt: f64, m: usize) -> Result<f64> {
    if !(dt > 0.0) {
        return Err(Error::Range(format!("dt must be positive, got {dt}")));
    }
    if t < -1e-12 || t + dt > traj.t_end() + 1e-12 {
        return Err(Error::Range(format!("need 0 <= t and t + dt <= {}, got t = {t}, dt = {dt}", traj.t_end())));
    }
    let now = traj.segment(t, m)?;
    let next = traj.segment(t + dt, m)?;
    let h = 1.0 / m as f64;
    let n = now.dim();
    let w = trapezoid_weights(m);
    let mut total = 0.0;
    for (j, wj) in w.iter().enumerate() {
        let deriv: Vec<Complex64> = (0..n)
            .map(|i| {
                let f = |k: usize| now.values[k][i];
                if j == 0 {
                    (f(1) - f(0)) / h
                } else if j == m {
                    (f(m) - f(m - 1)) / h
                } else {
                    (f(j + 1) - f(j - 1)) / (2.0 * h)
                }
            })
            .collect();
        let diff: f64 = (0..n).map(|i| ((next.values[j][i] - now.values[j][i]) / dt - deriv[i]).norm_sqr()).sum();
        total += wj * diff;
    }
    Ok(total.sqrt())
}

#[derive(Serialize, Deserialize)]
struct TailJson {
    m: usize,
    values: Vec<Vec<[f64; 2]>>,
}

#[derive(Serialize, Deserialize)]
struct LiftedJson {
    head: Vec<[f64; 2]>,
    tail: TailJson,
}

fn pairs(v: &CVector) -> Vec<[f64; 2]> {
    v.iter().map(|z| [z.re, z.im]).collect()
}

fn unpairs(v: &[[f64; 2]]) -> CVector {
    CVector(v.iter().map(|p| Complex64::new(p[0], p[1])).collect())
}

impl Serialize for LiftedState {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        LiftedJson {
            head: pairs(&self.head),
            tail: TailJson { m: self.tail.m, values: self.tail.values.iter().map(pairs).collect() },
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for LiftedState {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let raw = LiftedJson::deserialize(d)?;
        if raw.tail.values.len() != raw.tail.m + 1 {
            return Err(D::Error::custom(format!(
                "tail has {} values but m = {} needs {}",
                raw.tail.values.len(),
                raw.tail.m,
                raw.tail.m + 1
            )));
        }
        let tail =
            HistorySegment::new(raw.tail.values.iter().map(|v| unpairs(v)).collect()).map_err(D::Error::custom)?;
        LiftedState::new(unpairs(&raw.head), tail).map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scalar_state(x: f64, m: usize, f: impl Fn(f64) -> f64) -> LiftedState {
        LiftedState::new(CVector::from_real(&[x]), HistorySegment::scalar_fn(m, f)).unwrap()
    }

    #[test]
    fn zero_tails_reduce_to_head_inner_product() {
        let x = CVector(vec![Complex64::new(1.0, 2.0), Complex64::new(-0.5, 0.0)]);
        let y = CVector(vec![Complex64::new(0.3, -1.0), Complex64::new(2.0, 1.0)]);
        let v = LiftedState::new(x.clone(), HistorySegment::zeros(10, 2)).unwrap();
        let w = LiftedState::new(y.clone(), HistorySegment::zeros(10, 2)).unwrap();
        assert_eq!(inner(&v, &w).unwrap(), x.dot(&y));
        assert!((lifted_norm(&v) - x.norm()).abs() < 1e-15);
    }

    #[test]
    fn unit_tails_integrate_to_one() {
        let v = scalar_state(0.0, 17, |_| 1.0);
        assert!((inner(&v, &v).unwrap().re - 1.0).abs() < 1e-14);
        let v = scalar_state(1.0, 17, |_| 1.0);
        assert!((lifted_norm(&v) - 2f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn trapezoid_exact_for_affine_tails() {
        let v = scalar_state(0.0, 7, |s| s);
        let w = scalar_state(0.0, 7, |_| 1.0);
        assert!((inner(&v, &w).unwrap().re + 0.5).abs() < 1e-15);
    }

    #[test]
    fn exponential_tail_norm_converges_at_second_order() {
        let exact = ((1.0 - (-2.0f64).exp()) / 2.0).sqrt();
        assert!((exact - 0.65752).abs() < 1e-5);
        let err = |m| (lifted_norm(&scalar_state(0.0, m, f64::exp)) - exact).abs();
        let (e1, e2) = (err(50), err(100));
        assert!(e1 < 1.0 / (50.0 * 50.0));
        assert!(e1 / e2 > 3.5, "ratio {}", e1 / e2);
    }

    #[test]
    fn grid_mismatch_is_a_dimension_error() {
        let v = scalar_state(0.0, 10, |_| 1.0);
        let w = scalar_state(0.0, 11, |_| 1.0);
        assert!(matches!(inner(&v, &w), Err(Error::Dimension(_))));
    }

    #[test]
    fn domain_predicate() {
        assert!(scalar_state(1.0, 10, |s| 1.0 + s).is_in_domain());
        assert!(!scalar_state(1.0, 10, |s| s).is_in_domain());
    }

    #[test]
    fn interpolation_between_nodes() {
        let f = HistorySegment::scalar_fn(4, |s| 2.0 * s);
        assert!((f.eval(-0.6)[0].re + 1.2).abs() < 1e-14);
        assert_eq!(f.eval(-1.0)[0].re, -2.0);
        assert_eq!(f.eval(0.0)[0].re, 0.0);
    }

    #[test]
    fn steps_per_cell_validation() {
        assert_eq!(GridSpec::new(200).steps_per_cell().unwrap(), 2);
        assert_eq!(GridSpec::with_dt(200, 1e-3).steps_per_cell().unwrap(), 5);
        assert!(matches!(GridSpec::with_dt(200, 3e-3).steps_per_cell(), Err(Error::Config(_))));
    }

    #[test]
    fn json_round_trip() {
        let v = LiftedState::new(CVector(vec![Complex64::new(1.0, -2.0)]), HistorySegment::scalar_fn(3, |s| s * s))
            .unwrap();
        let text = serde_json::to_string(&v).unwrap();
        assert!(text.starts_with("{\"head\":[[1.0,-2.0]],\"tail\":{\"m\":3,\"values\":"));
        let back: LiftedState = serde_json::from_str(&text).unwrap();
        assert_eq!(back, v);
        let bad = "{\"head\":[[1.0,0.0]],\"tail\":{\"m\":3,\"values\":[[[0.0,0.0]]]}}";
        assert!(serde_json::from_str::<LiftedState>(bad).is_err());
    }

    fn arb_state(n: usize, m: usize) -> impl Strategy<Value = LiftedState> {
        prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), n * (m + 2)).prop_map(move |c| {
            let coords: Vec<Complex64> = c.into_iter().map(|(a, b)| Complex64::new(a, b)).collect();
            LiftedState::from_coords(n, m, &coords).unwrap()
        })
    }

    proptest! {
        #[test]
        fn conjugate_symmetry(v in arb_state(2, 9), w in arb_state(2, 9)) {
            let a = inner(&v, &w).unwrap();
            let b = inner(&w, &v).unwrap();
            prop_assert!((a - b.conj()).norm() <= 1e-12 * (1.0 + a.norm()));
        }

        #[test]
        fn norm_matches_inner(v in arb_state(3, 6)) {
            let n = lifted_norm(&v);
            let ip = inner(&v, &v).unwrap();
            prop_assert!((n * n - ip.re).abs() <= 1e-12 * n * n);
            prop_assert!(ip.im.abs() <= 1e-12 * n * n);
        }

        #[test]
        fn parallelogram_law(v in arb_state(2, 8), w in arb_state(2, 8)) {
            let p = lifted_norm(&v.add(&w).unwrap()).powi(2) + lifted_norm(&v.sub(&w).unwrap()).powi(2);
            let q = 2.0 * lifted_norm(&v).powi(2) + 2.0 * lifted_norm(&w).powi(2);
            prop_assert!((p - q).abs() <= 1e-10 * q.max(1.0));
        }

        #[test]
        fn trapezoid_exact_on_affine(a in -2.0f64..2.0, b in -2.0f64..2.0, c in -2.0f64..2.0, d in -2.0f64..2.0, m in 1usize..40) {
            let v = scalar_state(0.0, m, |s| a + b * s);
            let w = scalar_state(0.0, m, |s| c + d * s);
            // integral of (a + b s)(c + d s) over [-1, 0] is exact only when one factor is constant
            let ip = inner(&v, &scalar_state(0.0, m, |_| c)).unwrap().re;
            let exact = c * (a - b / 2.0);
            prop_assert!((ip - exact).abs() <= 1e-12 * (1.0 + exact.abs()));
            let _ = w;
        }
    }
}
