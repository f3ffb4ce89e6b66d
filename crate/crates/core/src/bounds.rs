//! Norm bounds for the delay semigroup and the diagnostics around them.
//!
//! Operator norms are measured on the discretized lifted space at the given
//! grid and at its refinement; the difference sets the slack so that
//! discretization effects cannot fail a true inequality.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::adjoint::assemble_generator;
use crate::delay_state::{lifted_norm, GridSpec, HistorySegment, LiftedState};
use crate::error::{Error, Result};
use crate::numkernel::{expm, hermitian_max_eigenvalue, op_norm, top_singular_pair, CMatrix, CVector, ZERO};
use crate::output::fmt_float;
use crate::semigroup::{assemble_t_matrices, lifted_operator_norm, DelaySystem};

pub const MIN_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundKind {
    T0,
    Gronwall,
    Main,
    Mv,
    Envelope,
    Range,
    Derivative,
}

impl BoundKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BoundKind::T0 => "t0",
            BoundKind::Gronwall => "gronwall",
            BoundKind::Main => "main",
            BoundKind::Mv => "mv",
            BoundKind::Envelope => "envelope",
            BoundKind::Range => "range",
            BoundKind::Derivative => "derivative",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundSample {
    pub t: f64,
    pub measured: f64,
    pub theoretical: f64,
    /// A tighter bound checked alongside the theoretical one, when known.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sharp: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub kind: BoundKind,
    pub samples: Vec<BoundSample>,
    /// Minimum over samples of `bound - measured`, over the theoretical and
    /// (when present) the sharp bound.
    pub margin: f64,
    pub passed: bool,
    pub slack: f64,
    /// Advisory reports test hypotheses the theory does not guarantee.
    pub advisory: bool,
    pub extras: BTreeMap<String, f64>,
}

impl BoundReport {
    fn new(kind: BoundKind, samples: Vec<BoundSample>, slack: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Config(format!("{} check needs at least one sample time", kind.as_str())));
        }
        let margin = samples
            .iter()
            .map(|s| {
                let m = s.theoretical - s.measured;
                s.sharp.map_or(m, |b| m.min(b - s.measured))
            })
            .fold(f64::INFINITY, f64::min);
        Ok(BoundReport {
            kind,
            samples,
            margin,
            passed: margin >= -slack,
            slack,
            advisory: false,
            extras: BTreeMap::new(),
        })
    }

    /// CSV columns `t,measured,theoretical`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,measured,theoretical\n");
        for s in &self.samples {
            let _ = writeln!(out, "{},{},{}", fmt_float(s.t), fmt_float(s.measured), fmt_float(s.theoretical));
        }
        out
    }
}

/// `|T(t)|` at a grid and at its refinement.
#[derive(Debug, Clone)]
pub struct NormSweep {
    pub ts: Vec<f64>,
    pub coarse: Vec<f64>,
    pub fine: Vec<f64>,
}

impl NormSweep {
    pub fn measure(sys: &DelaySystem, ts: &[f64], grid: &GridSpec) -> Result<Self> {
        let norms = |g: &GridSpec| -> Result<Vec<f64>> {
            let mats = assemble_t_matrices(sys, ts, g)?;
            Ok(mats.iter().map(|t| lifted_operator_norm(t, sys.dim(), g.m)).collect())
        };
        Ok(NormSweep { ts: ts.to_vec(), coarse: norms(grid)?, fine: norms(&grid.refined())? })
    }

    /// `max(1e-6, 3 * max_t |coarse - fine|)`.
    pub fn slack(&self) -> f64 {
        let delta = self.coarse.iter().zip(&self.fine).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        MIN_SLACK.max(3.0 * delta)
    }
}

/// `|T0(t)| <= e^{t/2}`, and `<= sqrt(1 + t)` for `t <= 1`.
pub fn check_t0_bound(sys: &DelaySystem, ts: &[f64], grid: &GridSpec) -> Result<BoundReport> {
    sys.require_contraction()?;
    let sweep = NormSweep::measure(&sys.undelayed(), ts, grid)?;
    t0_report(&sweep)
}

pub fn t0_report(sweep: &NormSweep) -> Result<BoundReport> {
    let samples = sweep
        .ts
        .iter()
        .zip(&sweep.coarse)
        .map(|(&t, &measured)| BoundSample {
            t,
            measured,
            theoretical: (t / 2.0).exp(),
            sharp: (t <= 1.0).then(|| (1.0 + t).sqrt()),
        })
        .collect();
    BoundReport::new(BoundKind::T0, samples, sweep.slack())
}

fn require_unit_times(ts: &[f64]) -> Result<()> {
    if ts.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(Error::Range("this bound is stated for t in [0, 1]".into()));
    }
    Ok(())
}

/// `e^{-t/2} |T(t)| <= sqrt(2) e^{2 |A_1|^2 t}` on `[0, 1]`.
pub fn check_gronwall(sys: &DelaySystem, ts: &[f64], grid: &GridSpec) -> Result<BoundReport> {
    sys.require_contraction()?;
    let a1 = sys.single_delay_norm()?;
    require_unit_times(ts)?;
    gronwall_report(&NormSweep::measure(sys, ts, grid)?, a1)
}

pub fn gronwall_report(sweep: &NormSweep, a1: f64) -> Result<BoundReport> {
    let samples = sweep
        .ts
        .iter()
        .zip(&sweep.coarse)
        .map(|(&t, &norm)| BoundSample {
            t,
            measured: (-t / 2.0).exp() * norm,
            theoretical: 2f64.sqrt() * (2.0 * a1 * a1 * t).exp(),
            sharp: None,
        })
        .collect();
    let mut r = BoundReport::new(BoundKind::Gronwall, samples, sweep.slack())?;
    r.extras.insert("a1_norm".into(), a1);
    Ok(r)
}

/// `|T(t)| <= e^{t/2} (1 + |A_1| M sqrt(t))` with `M = sqrt(2) e^{2 |A_1|^2}`.
/// Also checks `M_measured = max_s e^{-s/2} |T(s)| <= M` over the samples and
/// reports the bound with `M_measured` in place of `M`.
pub fn check_main_bound(sys: &DelaySystem, ts: &[f64], grid: &GridSpec) -> Result<BoundReport> {
    sys.require_contraction()?;
    let a1 = sys.single_delay_norm()?;
    require_unit_times(ts)?;
    main_report(&NormSweep::measure(sys, ts, grid)?, a1)
}

pub fn main_report(sweep: &NormSweep, a1: f64) -> Result<BoundReport> {
    let m_cap = 2f64.sqrt() * (2.0 * a1 * a1).exp();
    let m_measured = sweep.ts.iter().zip(&sweep.coarse).map(|(&t, &n)| (-t / 2.0).exp() * n).fold(0.0, f64::max);
    let samples: Vec<BoundSample> = sweep
        .ts
        .iter()
        .zip(&sweep.coarse)
        .map(|(&t, &measured)| BoundSample {
            t,
            measured,
            theoretical: (t / 2.0).exp() * (1.0 + a1 * m_cap * t.sqrt()),
            sharp: None,
        })
        .collect();
    let tight_margin = samples
        .iter()
        .map(|s| (s.t / 2.0).exp() * (1.0 + a1 * m_measured * s.t.sqrt()) - s.measured)
        .fold(f64::INFINITY, f64::min);
    let mut r = BoundReport::new(BoundKind::Main, samples, sweep.slack())?;
    r.passed &= m_measured <= m_cap + r.slack;
    r.extras.insert("a1_norm".into(), a1);
    r.extras.insert("m_cap".into(), m_cap);
    r.extras.insert("m_measured".into(), m_measured);
    r.extras.insert("tight_margin".into(), tight_margin);
    Ok(r)
}

#[derive(Debug, Clone, Serialize)]
pub struct MvEstimate {
    pub t0: f64,
    /// Largest value found; a lower bound for the supremum.
    pub q: f64,
    /// `sum_k |A_k| (t0 + sqrt(t0))`.
    pub upper_chain: f64,
    pub states_tried: usize,
}

pub const MV_RANDOM_STATES: usize = 1000;

/// `sup int_0^{t0} |Psi [T0(r) v]_tail| dr` over unit `v` in the domain, estimated
/// over the reduced basis, seeded random states and indicator extremals.
pub fn miyadera_voigt_q(sys: &DelaySystem, t0: f64, grid: &GridSpec, seed: u64) -> Result<MvEstimate> {
    sys.require_contraction()?;
    if !(t0 > 0.0 && t0 <= 1.0) {
        return Err(Error::Range(format!("t0 = {t0} outside (0, 1]")));
    }
    let n = sys.dim();
    let m = grid.m;
    let steps = ((t0 / grid.dt) - 1e-9).ceil().max(1.0) as usize;
    let dr = t0 / steps as f64;
    // e^{(r - h_k) A} for r > h_k, per delay and quadrature node
    let mut exps: Vec<Vec<Option<CMatrix>>> = Vec::new();
    for d in sys.delays() {
        let mut row = Vec::with_capacity(steps + 1);
        for i in 0..=steps {
            let s = i as f64 * dr - d.h;
            row.push(if s > 1e-12 { Some(expm(sys.a(), s)?) } else { None });
        }
        exps.push(row);
    }
    let active = sys.delays().iter().any(|d| op_norm(&d.matrix) > 0.0);
    let value = |v: &LiftedState| -> f64 {
        let norm = lifted_norm(v);
        if norm == 0.0 || !active {
            return 0.0;
        }
        let mut total = 0.0;
        let mut buf = vec![ZERO; n];
        for i in 0..=steps {
            let r = i as f64 * dr;
            let mut acc = vec![ZERO; n];
            for (d, row) in sys.delays().iter().zip(&exps) {
                match &row[i] {
                    Some(e) => e.matvec_into(&v.head.0, &mut buf),
                    None => v.tail.eval_into(r - d.h, &mut buf),
                }
                let y = d.matrix.matvec(&buf);
                acc.iter_mut().zip(&y).for_each(|(a, b)| *a += b);
            }
            let w = if i == 0 || i == steps { 0.5 * dr } else { dr };
            total += w * acc.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        }
        total / norm
    };

    let mut best = 0.0f64;
    let mut tried = 0usize;
    let mut consider = |v: &LiftedState| {
        best = best.max(value(v));
        tried += 1;
    };
    // reduced basis: head direction (with f_m fused) and interior tail nodes
    for i in 0..n {
        let mut x = CVector::zeros(n);
        x[i] = Complex64::new(1.0, 0.0);
        let mut tail = HistorySegment::zeros(m, n);
        *tail.value_mut(m) = x.clone();
        consider(&LiftedState::new(x, tail)?);
        for j in 0..m {
            let mut tail = HistorySegment::zeros(m, n);
            tail.value_mut(j)[i] = Complex64::new(1.0, 0.0);
            consider(&LiftedState::new(CVector::zeros(n), tail)?);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MV_RANDOM_STATES {
        let mut draw = || Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let x = CVector((0..n).map(|_| draw()).collect());
        let mut tail = HistorySegment::zeros(m, n);
        for j in 0..m {
            *tail.value_mut(j) = CVector((0..n).map(|_| draw()).collect());
        }
        *tail.value_mut(m) = x.clone();
        consider(&LiftedState::new(x, tail)?);
    }
    // indicator of [-h_k, -h_k + t0] along the top right singular vector of A_k
    for d in sys.delays() {
        let (_, dir) = top_singular_pair(&d.matrix);
        let tail = HistorySegment::from_fn(m, n, |s| {
            if s >= -d.h - 1e-12 && s <= -d.h + t0 + 1e-12 && s < -1e-12 {
                dir.clone()
            } else {
                CVector::zeros(n)
            }
        })?;
        consider(&LiftedState::new(tail.eval(0.0), tail)?);
    }
    let upper_chain = sys.delays().iter().map(|d| op_norm(&d.matrix)).sum::<f64>() * (t0 + t0.sqrt());
    Ok(MvEstimate { t0, q: best, upper_chain, states_tried: tried })
}

pub fn mv_report(est: &MvEstimate) -> Result<BoundReport> {
    let sample = BoundSample { t: est.t0, measured: est.q, theoretical: est.upper_chain, sharp: None };
    let mut r = BoundReport::new(BoundKind::Mv, vec![sample], MIN_SLACK)?;
    r.extras.insert("q".into(), est.q);
    r.extras.insert("q_below_one".into(), if est.q < 1.0 { 1.0 } else { 0.0 });
    Ok(r)
}

#[derive(Debug, Clone, Serialize)]
pub struct Envelope {
    pub ts: Vec<f64>,
    /// Least concave majorant of `log norm` at each sample time.
    pub log_envelope: Vec<f64>,
    /// `exp(log_envelope)`.
    pub values: Vec<f64>,
    /// Indices of the hull vertices.
    pub vertices: Vec<usize>,
}

/// Least concave majorant of `(t, log norm)` by the upper hull (monotone chain).
pub fn log_concave_envelope(ts: &[f64], norms: &[f64]) -> Result<Envelope> {
    if ts.len() != norms.len() || ts.is_empty() {
        return Err(Error::Dimension("envelope needs equally many times and norms".into()));
    }
    if ts.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Config("envelope times must be strictly increasing".into()));
    }
    if let Some(bad) = norms.iter().find(|&&v| !(v > 0.0)) {
        return Err(Error::Domain(format!("norms must be positive, got {bad}")));
    }
    let logs: Vec<f64> = norms.iter().map(|v| v.ln()).collect();
    let mut hull: Vec<usize> = Vec::new();
    for i in 0..ts.len() {
        while hull.len() >= 2 {
            let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            // drop b when it lies on or below the chord a -> i
            let cross = (ts[b] - ts[a]) * (logs[i] - logs[a]) - (logs[b] - logs[a]) * (ts[i] - ts[a]);
            if cross >= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(i);
    }
    let mut log_envelope = Vec::with_capacity(ts.len());
    let mut seg = 0;
    for (i, &t) in ts.iter().enumerate() {
        while seg + 2 < hull.len() && hull[seg + 1] <= i {
            seg += 1;
        }
        let value = match hull.get(seg + 1) {
            Some(&b) if b != i && hull[seg] != i => {
                let a = hull[seg];
                logs[a] + (logs[b] - logs[a]) * (t - ts[a]) / (ts[b] - ts[a])
            }
            _ => logs[i],
        };
        log_envelope.push(value.max(logs[i]));
    }
    let values = log_envelope.iter().map(|v| v.exp()).collect();
    Ok(Envelope { ts: ts.to_vec(), log_envelope, values, vertices: hull })
}

pub fn envelope_report(env: &Envelope, norms: &[f64]) -> Result<BoundReport> {
    let samples = env
        .ts
        .iter()
        .zip(norms)
        .zip(&env.values)
        .map(|((&t, &measured), &theoretical)| BoundSample { t, measured, theoretical, sharp: None })
        .collect();
    BoundReport::new(BoundKind::Envelope, samples, MIN_SLACK)
}

/// Largest eigenvalue of the Hermitian part of the discretized generator in
/// the quadrature metric, i.e. `sup Re<A v, v> / |v|^2` over the discrete domain.
pub fn numerical_range_bound(sys: &DelaySystem, grid: &GridSpec) -> Result<f64> {
    let gen = assemble_generator(sys, grid)?;
    hermitian_max_eigenvalue(&gen.orthonormal_matrix().hermitian_part())
}

/// `|T(t)| <= e^{omega t}` with `omega` from [`numerical_range_bound`].
pub fn range_report(sweep: &NormSweep, omega: f64) -> Result<BoundReport> {
    let samples = sweep
        .ts
        .iter()
        .zip(&sweep.coarse)
        .map(|(&t, &measured)| BoundSample { t, measured, theoretical: (omega * t).exp(), sharp: None })
        .collect();
    let mut r = BoundReport::new(BoundKind::Range, samples, sweep.slack())?;
    r.advisory = true;
    r.extras.insert("omega_est".into(), omega);
    Ok(r)
}

#[derive(Debug, Clone, Serialize)]
pub struct DerivativeEstimate {
    pub estimate: f64,
    pub residual: f64,
    /// `(h, (N(h) - 1) / h)` with `N` grid-extrapolated.
    pub quotients: Vec<(f64, f64)>,
}

/// Limit of `(|T(h)| - 1) / h` as `h -> 0+`. Each norm is extrapolated in the
/// grid (`2 N_{2m} - N_m`), then the last two quotients are extrapolated
/// linearly to `h = 0`.
pub fn norm_derivative_at_zero(sys: &DelaySystem, hs: &[f64], grid: &GridSpec) -> Result<DerivativeEstimate> {
    if hs.is_empty() || hs.iter().any(|&h| !(h > 0.0)) || hs.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::Config("derivative steps must be positive and strictly decreasing".into()));
    }
    let sweep = NormSweep::measure(sys, hs, grid)?;
    let quotients: Vec<(f64, f64)> = hs
        .iter()
        .zip(sweep.coarse.iter().zip(&sweep.fine))
        .map(|(&h, (&c, &f))| (h, (2.0 * f - c - 1.0) / h))
        .collect();
    let (estimate, residual) = match quotients.as_slice() {
        [.., (h1, q1), (h2, q2)] => {
            let extra = q2 + (q2 - q1) * h2 / (h1 - h2);
            (extra, (extra - q2).abs())
        }
        [(_, q)] => (*q, f64::NAN),
        [] => unreachable!(),
    };
    Ok(DerivativeEstimate { estimate, residual, quotients })
}

pub fn derivative_report(est: &DerivativeEstimate, omega: f64) -> Result<BoundReport> {
    let samples = est
        .quotients
        .iter()
        .map(|&(h, q)| BoundSample { t: h, measured: q, theoretical: omega, sharp: None })
        .collect();
    let mut r = BoundReport::new(BoundKind::Derivative, samples, MIN_SLACK)?;
    r.advisory = true;
    r.extras.insert("estimate".into(), est.estimate);
    r.extras.insert("residual".into(), est.residual);
    Ok(r)
}
