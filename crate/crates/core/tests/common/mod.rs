#![allow(dead_code)]

use std::path::PathBuf;

use delayadm::delay_state::{HistorySegment, LiftedState};
use delayadm::numkernel::{op_norm, CMatrix, CVector};
use delayadm::semigroup::DelaySystem;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, n: usize) -> CMatrix {
    let data = (0..n * n).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
    CMatrix::from_row_major(n, n, data).unwrap()
}

/// `K - C C^* / n - eps I` with `K` skew-Hermitian, so the Hermitian part is
/// negative semidefinite by construction.
pub fn random_contraction(rng: &mut ChaCha8Rng, n: usize) -> CMatrix {
    let k = random_matrix(rng, n);
    let skew = (&k - &k.adjoint()).scale_real(0.5);
    let c = random_matrix(rng, n);
    let damp = (&c * &c.adjoint()).scale_real(1.0 / n as f64);
    let eps = rng.gen_range(0.0..0.2);
    &(&skew - &damp) - &CMatrix::identity(n).scale_real(eps)
}

pub fn random_with_norm(rng: &mut ChaCha8Rng, n: usize, norm: f64) -> CMatrix {
    let m = random_matrix(rng, n);
    let s = op_norm(&m);
    m.scale_real(norm / s)
}

/// Contraction `A`, single delay at `h = 1` with `|A_1| = a1_norm`, one input column.
pub fn random_system(seed: u64, n: usize, a1_norm: f64) -> DelaySystem {
    let mut r = rng(seed);
    let a = random_contraction(&mut r, n);
    let a1 = random_with_norm(&mut r, n, a1_norm);
    let b =
        CMatrix::from_row_major(n, 1, (0..n).map(|_| Complex64::new(r.gen_range(-1.0..1.0), 0.0)).collect()).unwrap();
    DelaySystem::single(a, a1, b).unwrap()
}

/// Smooth domain state `(f(0), f)` with `f(s) = c0 + c1 cos(pi s) + c2 s^2`.
pub fn smooth_state(seed: u64, n: usize, m: usize) -> LiftedState {
    let mut r = rng(seed);
    let mut v = || CVector((0..n).map(|_| Complex64::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0))).collect());
    let (c0, c1, c2) = (v(), v(), v());
    let tail = HistorySegment::from_fn(m, n, |s| {
        let mut out = c0.clone();
        out.axpy(Complex64::new((std::f64::consts::PI * s).cos(), 0.0), &c1);
        out.axpy(Complex64::new(s * s, 0.0), &c2);
        out
    })
    .unwrap();
    let x = tail.value(m).clone();
    LiftedState::new(x, tail).unwrap()
}

pub fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

/// Strip the `timings_ms` object from a manifest, the one field that differs between runs.
pub fn manifest_without_timings(text: &str) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_str(text).unwrap();
    v.as_object_mut().unwrap().remove("timings_ms");
    v
}
