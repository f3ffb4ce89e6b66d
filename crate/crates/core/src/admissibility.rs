//! Admissibility of a bounded control operator: resolvent norms of the lifted
//! generator applied to `(B, 0)`, half-plane sweeps of the weighted resolvent,
//! and finite-time input-to-state constants.

use num_complex::Complex64;
use serde::Serialize;

use crate::adjoint::assemble_generator;
use crate::delay_state::{lifted_weights, GridSpec, LiftedState};
use crate::error::{Error, Result};
use crate::numkernel::{op_norm, weighted_op_norm, CMatrix, CVector, Lu, ONE};
use crate::semigroup::{simulate_steps, DelaySystem, InputSignal};

/// `Delta(lambda) = lambda I - A - sum_k A_k e^{-lambda h_k}`.
pub fn characteristic_matrix(sys: &DelaySystem, lambda: Complex64) -> CMatrix {
    let n = sys.dim();
    let mut d = CMatrix::identity(n).scale(lambda);
    d.add_block(0, 0, -ONE, sys.a());
    for k in sys.delays() {
        d.add_block(0, 0, -(-lambda * k.h).exp(), &k.matrix);
    }
    d
}

fn characteristic_det(sys: &DelaySystem, lambda: Complex64) -> Result<Complex64> {
    match Lu::factor(&characteristic_matrix(sys, lambda)) {
        Ok(lu) => Ok(lu.det()),
        Err(Error::Singular { .. }) => Ok(Complex64::new(0.0, 0.0)),
        Err(e) => Err(e),
    }
}

/// Root of `det Delta` near `start`, by Newton's method with a central
/// difference derivative.
pub fn characteristic_root_near(sys: &DelaySystem, start: Complex64) -> Result<Complex64> {
    const MAX_ITERS: usize = 100;
    let mut lambda = start;
    let mut step_norm = f64::INFINITY;
    for _ in 0..MAX_ITERS {
        let f = characteristic_det(sys, lambda)?;
        if f.norm() == 0.0 {
            return Ok(lambda);
        }
        let h = 1e-6 * (1.0 + lambda.norm());
        let df = (characteristic_det(sys, lambda + h)? - characteristic_det(sys, lambda - h)?) / (2.0 * h);
        if df.norm() == 0.0 || !df.is_finite() {
            break;
        }
        let step = f / df;
        lambda -= step;
        step_norm = step.norm();
        if step_norm <= 1e-13 * (1.0 + lambda.norm()) {
            return Ok(lambda);
        }
    }
    Err(Error::Convergence { iterations: MAX_ITERS, defect: step_norm })
}

/// `int_{-1}^0 e^{2 Re(lambda) sigma} d sigma`.
pub fn kappa(re: f64) -> f64 {
    if re.abs() < 1e-12 {
        1.0 - re
    } else {
        -(-2.0 * re).exp_m1() / (2.0 * re)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Analytic,
    Discrete,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Analytic => "analytic",
            Method::Discrete => "discrete",
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ResolventSample {
    #[serde(serialize_with = "ser_complex")]
    pub lambda: Complex64,
    pub norm: f64,
    pub weighted: f64,
    pub method: Method,
}

pub(crate) fn ser_complex<S: serde::Serializer>(z: &Complex64, s: S) -> std::result::Result<S::Ok, S::Error> {
    [z.re, z.im].serialize(s)
}

/// `|Delta(lambda)^{-1}|` times the size of the terms of `Delta` above which
/// `lambda` is treated as a characteristic root.
const ROOT_CONDITION: f64 = 1e13;

fn characteristic_scale(sys: &DelaySystem, lambda: Complex64) -> f64 {
    lambda.norm()
        + op_norm(sys.a())
        + sys.delays().iter().map(|d| op_norm(&d.matrix) * (-lambda.re * d.h).exp()).sum::<f64>()
}

fn weight(lambda: Complex64, omega_ref: f64) -> Result<f64> {
    let gap = lambda.re - omega_ref;
    if !(gap > 0.0) {
        return Err(Error::Range(format!("Re(lambda) = {} must exceed omega = {omega_ref}", lambda.re)));
    }
    Ok(gap.sqrt())
}

/// Closed form: the resolvent image of `(Bu, 0)` is `(x, e^{lambda sigma} x)` with
/// `Delta(lambda) x = Bu`.
pub fn resolvent_norm_analytic(sys: &DelaySystem, lambda: Complex64, omega_ref: f64) -> Result<ResolventSample> {
    let w = weight(lambda, omega_ref)?;
    let delta = characteristic_matrix(sys, lambda);
    let lu = Lu::factor(&delta).map_err(|_| Error::CharacteristicRoot { lambda })?;
    let inverse = lu.solve_matrix(&CMatrix::identity(sys.dim()))?;
    if op_norm(&inverse) * characteristic_scale(sys, lambda) > ROOT_CONDITION {
        return Err(Error::CharacteristicRoot { lambda });
    }
    let x = lu.solve_matrix(sys.b())?;
    let norm = op_norm(&x) * (1.0 + kappa(lambda.re)).sqrt();
    Ok(ResolventSample { lambda, norm, weighted: w * norm, method: Method::Analytic })
}

/// Same quantity from `(lambda I - A_h)^{-1}` on the compatibility-reduced grid.
pub fn resolvent_norm_discrete(
    sys: &DelaySystem,
    lambda: Complex64,
    grid: &GridSpec,
    omega_ref: f64,
) -> Result<ResolventSample> {
    let w = weight(lambda, omega_ref)?;
    let gen = assemble_generator(sys, grid)?;
    let size = gen.matrix().rows();
    let mut shifted = CMatrix::identity(size).scale(lambda);
    shifted.add_block(0, 0, -ONE, gen.matrix());
    let p = sys.input_dim();
    let mut rhs = CMatrix::zeros(size, p);
    rhs.set_block(0, 0, sys.b());
    let x = Lu::factor(&shifted)?.solve_matrix(&rhs)?;
    let ones = vec![1.0; p];
    let norm = weighted_op_norm(&x, gen.metric(), &ones);
    Ok(ResolventSample { lambda, norm, weighted: w * norm, method: Method::Discrete })
}

/// Log-spaced real parts on `[omega + delta, omega + r_max]` times a symmetric
/// linear imaginary grid on `[-im_max, im_max]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRegion {
    pub delta: f64,
    pub r_max: f64,
    pub im_max: f64,
    pub n_re: usize,
    pub n_im: usize,
}

impl Default for SweepRegion {
    fn default() -> Self {
        SweepRegion { delta: 1e-3, r_max: 1e3, im_max: 50.0, n_re: 61, n_im: 101 }
    }
}

impl SweepRegion {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.r_max > self.delta && self.im_max >= 0.0) {
            return Err(Error::Config("sweep region needs 0 < delta < r_max and im_max >= 0".into()));
        }
        if self.n_re < 2 || self.n_im < 1 {
            return Err(Error::Config("sweep region needs n_re >= 2 and n_im >= 1".into()));
        }
        Ok(())
    }

    pub fn re_points(&self, omega: f64) -> Vec<f64> {
        let (a, b) = (self.delta.ln(), self.r_max.ln());
        let last = (self.n_re - 1) as f64;
        (0..self.n_re).map(|i| omega + (a + (b - a) * i as f64 / last).exp()).collect()
    }

    pub fn im_points(&self) -> Vec<f64> {
        if self.n_im == 1 {
            return vec![0.0];
        }
        let last = (self.n_im - 1) as f64;
        (0..self.n_im).map(|i| -self.im_max + 2.0 * self.im_max * i as f64 / last).collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct WeissReport {
    pub c_est: f64,
    #[serde(serialize_with = "ser_complex")]
    pub argmax_lambda: Complex64,
    pub omega_ref: f64,
    pub grid: SweepRegion,
    #[serde(skip)]
    pub samples: Vec<ResolventSample>,
    #[serde(serialize_with = "ser_complex_list")]
    pub skipped: Vec<Complex64>,
}

fn ser_complex_list<S: serde::Serializer>(v: &[Complex64], s: S) -> std::result::Result<S::Ok, S::Error> {
    v.iter().map(|z| [z.re, z.im]).collect::<Vec<_>>().serialize(s)
}

impl WeissReport {
    /// Sweep CSV: `re_lambda,im_lambda,norm,weighted,method`.
    pub fn to_csv(&self) -> String {
        use crate::output::fmt_float;
        let mut out = String::from("re_lambda,im_lambda,norm,weighted,method\n");
        for s in &self.samples {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                fmt_float(s.lambda.re),
                fmt_float(s.lambda.im),
                fmt_float(s.norm),
                fmt_float(s.weighted),
                s.method.as_str()
            ));
        }
        out
    }
}

const GOLDEN_TOL: f64 = 1e-9;

/// Maximize `f` on `[a, b]` by golden-section search.
fn golden_max(f: &mut dyn FnMut(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > GOLDEN_TOL * (1.0 + a.abs() + b.abs()) {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    if fc >= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Largest weighted analytic resolvent value over the sweep region, refined by
/// golden-section search along the real and imaginary axes around the grid
/// maximizer. Characteristic roots on the grid are skipped and listed.
pub fn weiss_constant(sys: &DelaySystem, omega_ref: f64, region: &SweepRegion) -> Result<WeissReport> {
    region.validate()?;
    let res = region.re_points(omega_ref);
    let ims = region.im_points();
    let mut samples = Vec::with_capacity(res.len() * ims.len());
    let mut skipped = Vec::new();
    let mut best: Option<(usize, usize, f64)> = None;
    for (i, &re) in res.iter().enumerate() {
        for (j, &im) in ims.iter().enumerate() {
            let lambda = Complex64::new(re, im);
            match resolvent_norm_analytic(sys, lambda, omega_ref) {
                Ok(s) => {
                    if best.is_none_or(|(_, _, v)| s.weighted > v) {
                        best = Some((i, j, s.weighted));
                    }
                    samples.push(s);
                }
                Err(Error::CharacteristicRoot { lambda }) => skipped.push(lambda),
                Err(e) => return Err(e),
            }
        }
    }
    let Some((bi, bj, mut c_est)) = best else {
        return Err(Error::Config("every sweep point hit a characteristic root".into()));
    };
    let mut arg = Complex64::new(res[bi], ims[bj]);
    let eval = |lambda: Complex64| -> f64 {
        resolvent_norm_analytic(sys, lambda, omega_ref).map_or(f64::NEG_INFINITY, |s| s.weighted)
    };
    for _ in 0..2 {
        // real axis, bracketed by the neighbouring log-grid points
        let lo = if bi > 0 { res[bi - 1] } else { omega_ref + region.delta };
        let hi = if bi + 1 < res.len() { res[bi + 1] } else { res[bi] };
        let (im, re0) = (arg.im, arg.re);
        let (re, v) = golden_max(&mut |re| eval(Complex64::new(re, im)), lo.min(re0), hi.max(re0));
        if v > c_est {
            c_est = v;
            arg = Complex64::new(re, im);
        }
        if ims.len() > 1 {
            let step = ims[1] - ims[0];
            let re = arg.re;
            let lo = (arg.im - step).max(-region.im_max);
            let hi = (arg.im + step).min(region.im_max);
            let (im, v) = golden_max(&mut |im| eval(Complex64::new(re, im)), lo, hi);
            if v > c_est {
                c_est = v;
                arg = Complex64::new(re, im);
            }
        }
    }
    Ok(WeissReport { c_est, argmax_lambda: arg, omega_ref, grid: region.clone(), samples, skipped })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FiniteTimeConstants {
    pub tau: f64,
    pub c_full: f64,
    pub c_head: f64,
}

/// Norm of `u -> int_0^tau T(tau - s) B u(s) ds` on piecewise-linear inputs with
/// nodes every `1/m`, measured with the lumped trapezoid metric on
/// `L^2(0, tau; U)` and the quadrature metric on the lifted space.
///
/// From zero initial data the map is shift invariant on the step grid, so the
/// response to the hat at node `i` is the response to the hat at node 1 read
/// `(i - 1)` cells earlier. Two simulations per input direction suffice.
pub fn finite_time_constant(sys: &DelaySystem, tau: f64, grid: &GridSpec) -> Result<FiniteTimeConstants> {
    grid.steps_per_cell()?;
    let cell = grid.cell();
    let ratio = tau / cell;
    let k = ratio.round();
    if !(tau > 0.0) || (ratio - k).abs() > 1e-6 * ratio.max(1.0) {
        return Err(Error::Config(format!("tau = {tau} must be a positive multiple of the cell 1/{}", grid.m)));
    }
    let k = k as usize;
    let n = sys.dim();
    let p = sys.input_dim();
    let m = grid.m;
    let size = n * (m + 2);
    let zero = LiftedState::zeros(n, m);
    let mut x = CMatrix::zeros(size, (k + 1) * p);
    let mut input_w = vec![0.0; (k + 1) * p];
    for q in 0..p {
        let mut dir = CVector::zeros(p);
        dir[q] = ONE;
        let z = CVector::zeros(p);
        let first = InputSignal { spacing: cell, values: vec![dir.clone(), z.clone()] };
        let hat = InputSignal { spacing: cell, values: vec![z.clone(), dir, z] };
        let t0 = simulate_steps(sys, &zero, Some(&first), tau, grid)?;
        x.set_column(q, &t0.state_at(tau)?.to_coords());
        input_w[q] = 0.5 * cell;
        let t1 = simulate_steps(sys, &zero, Some(&hat), tau, grid)?;
        for i in 1..=k {
            let t = tau - (i - 1) as f64 * cell;
            let col = i * p + q;
            x.set_column(col, &t1.state_at(t)?.to_coords());
            input_w[col] = if i == k { 0.5 * cell } else { cell };
        }
    }
    let w = lifted_weights(n, m);
    let c_full = weighted_op_norm(&x, &w, &input_w);
    let head = x.block(0, 0, n, x.cols());
    let c_head = weighted_op_norm(&head, &vec![1.0; n], &input_w);
    Ok(FiniteTimeConstants { tau, c_full, c_head })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkernel::ZERO;
    use crate::semigroup::Delay;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn newton_finds_omega_constant() {
        // lambda = e^{-lambda} at the omega constant W(1)
        let sys = DelaySystem::scalar(0.0, 1.0, 1.0);
        let root = characteristic_root_near(&sys, c(0.5, 0.1)).unwrap();
        assert!((root - c(0.5671432904097838, 0.0)).norm() < 1e-12, "{root}");
    }

    #[test]
    fn characteristic_matrix_cases() {
        let sys = DelaySystem::scalar(-2.0, 0.0, 1.0);
        assert!((characteristic_matrix(&sys, c(1.0, 2.0))[(0, 0)] - c(3.0, 2.0)).norm() < 1e-15);
        let sys = DelaySystem::scalar(0.0, 1.0, 0.0);
        let d = characteristic_matrix(&sys, c(1.0, 0.0))[(0, 0)];
        assert!((d.re - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
        let a = CMatrix::from_real_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let a1 = CMatrix::from_real_rows(&[vec![0.5, 0.0], vec![0.0, 0.5]]).unwrap();
        let a2 = CMatrix::from_real_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let sys = DelaySystem::new(
            a.clone(),
            vec![Delay { matrix: a1.clone(), h: 1.0 }, Delay { matrix: a2.clone(), h: 0.5 }],
            CMatrix::zeros(2, 1),
        )
        .unwrap();
        let expected = &(&a.scale_real(-1.0) - &a1) - &a2;
        assert!(characteristic_matrix(&sys, ZERO).max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn kappa_limits() {
        assert!((kappa(0.0) - 1.0).abs() < 1e-15);
        assert!((kappa(1e-9) - 1.0).abs() < 1e-8);
        assert!((kappa(1.0) - (1.0 - (-2.0f64).exp()) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn analytic_scalar_values() {
        let sys = DelaySystem::scalar(-1.0, 0.0, 1.0);
        let s = resolvent_norm_analytic(&sys, c(1.0, 0.0), 0.0).unwrap();
        let expected = 0.5 * (1.0 + (1.0 - (-2.0f64).exp()) / 2.0).sqrt();
        assert!((s.norm - expected).abs() < 1e-14);
        assert!((s.weighted - s.norm).abs() < 1e-15);
        let sys = DelaySystem::scalar(0.0, 1.0, 1.0);
        let s = resolvent_norm_analytic(&sys, c(1.0, 0.0), 0.0).unwrap();
        let expected = (1.0 + kappa(1.0)).sqrt() / (1.0 - (-1.0f64).exp());
        assert!((s.norm - expected).abs() < 1e-14);
    }

    #[test]
    fn analytic_reports_characteristic_root() {
        let sys = DelaySystem::scalar(1.0, 0.0, 1.0);
        assert!(matches!(resolvent_norm_analytic(&sys, c(1.0, 0.0), 0.0), Err(Error::CharacteristicRoot { .. })));
        assert!(matches!(resolvent_norm_analytic(&sys, c(0.5, 0.0), 1.0), Err(Error::Range(_))));
    }

    #[test]
    fn zero_b_gives_zero() {
        let sys = DelaySystem::scalar(-1.0, 0.5, 0.0);
        assert_eq!(resolvent_norm_analytic(&sys, c(1.0, 3.0), 0.0).unwrap().norm, 0.0);
        assert_eq!(resolvent_norm_discrete(&sys, c(1.0, 3.0), &GridSpec::new(20), 0.0).unwrap().norm, 0.0);
    }

    #[test]
    fn discrete_matches_analytic() {
        let sys = DelaySystem::scalar(-1.0, 0.0, 1.0);
        let a = resolvent_norm_analytic(&sys, c(1.0, 0.0), 0.0).unwrap().norm;
        let d = resolvent_norm_discrete(&sys, c(1.0, 0.0), &GridSpec::new(200), 0.0).unwrap().norm;
        assert!((a - d).abs() < 0.01 * a, "{a} vs {d}");
    }

    #[test]
    fn golden_section_finds_parabola_peak() {
        let (x, v) = golden_max(&mut |x| -(x - 0.3) * (x - 0.3) + 2.0, -1.0, 1.0);
        assert!((x - 0.3).abs() < 1e-6 && (v - 2.0).abs() < 1e-12);
    }

    #[test]
    fn region_grids() {
        let r = SweepRegion { delta: 0.01, r_max: 100.0, im_max: 5.0, n_re: 5, n_im: 3 };
        let re = r.re_points(1.0);
        assert!((re[0] - 1.01).abs() < 1e-12 && (re[4] - 101.0).abs() < 1e-9);
        assert!((re[2] - 2.0).abs() < 1e-12);
        assert_eq!(r.im_points(), vec![-5.0, 0.0, 5.0]);
    }

    #[test]
    fn finite_time_shift_matches_direct_hats() {
        let sys = DelaySystem::scalar(-0.5, 0.4, 1.0);
        let grid = GridSpec::new(8);
        let tau = 1.5;
        let fast = finite_time_constant(&sys, tau, &grid).unwrap();
        // one simulation per hat
        let cell = grid.cell();
        let k = 12;
        let mut x = CMatrix::zeros(10, k + 1);
        let mut wts = vec![cell; k + 1];
        wts[0] *= 0.5;
        wts[k] *= 0.5;
        for i in 0..=k {
            let mut values = vec![CVector::zeros(1); k + 1];
            values[i] = CVector::from_real(&[1.0]);
            let u = InputSignal { spacing: cell, values };
            let traj = simulate_steps(&sys, &LiftedState::zeros(1, 8), Some(&u), tau, &grid).unwrap();
            x.set_column(i, &traj.state_at(tau).unwrap().to_coords());
        }
        let direct = weighted_op_norm(&x, &lifted_weights(1, 8), &wts);
        assert!((fast.c_full - direct).abs() < 1e-10 * direct);
    }

    #[test]
    fn finite_time_rejects_off_grid_tau() {
        let sys = DelaySystem::scalar(-1.0, 0.0, 1.0);
        assert!(matches!(finite_time_constant(&sys, 0.33, &GridSpec::new(10)), Err(Error::Config(_))));
    }
}
