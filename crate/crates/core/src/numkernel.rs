//! Dense complex linear algebra: matrices, the matrix exponential, LU solves,
//! operator norms and a couple of eigenvalue helpers.
//!
//! Everything is stored row-major in `Complex64`, including real systems. The
//! sizes handled here are the discretized lifted spaces of a few hundred to a
//! few thousand coordinates, which is comfortably dense-matrix territory.

use std::ops::{Add, Index, IndexMut, Mul, Sub};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Column vector of complex scalars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CVector(pub Vec<Complex64>);

impl CVector {
    pub fn zeros(n: usize) -> Self {
        CVector(vec![ZERO; n])
    }

    pub fn from_real(values: &[f64]) -> Self {
        CVector(values.iter().map(|&x| Complex64::new(x, 0.0)).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Complex64> {
        self.0.iter()
    }

    /// `<self, other>`, linear in the first argument.
    pub fn dot(&self, other: &CVector) -> Complex64 {
        dot(&self.0, &other.0)
    }

    pub fn norm(&self) -> f64 {
        norm2(&self.0)
    }

    pub fn scale(&self, s: Complex64) -> CVector {
        CVector(self.0.iter().map(|&x| x * s).collect())
    }

    pub fn axpy(&mut self, alpha: Complex64, x: &CVector) {
        for (y, &xi) in self.0.iter_mut().zip(&x.0) {
            *y += alpha * xi;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

impl Index<usize> for CVector {
    type Output = Complex64;
    fn index(&self, i: usize) -> &Complex64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for CVector {
    fn index_mut(&mut self, i: usize) -> &mut Complex64 {
        &mut self.0[i]
    }
}

impl Add for &CVector {
    type Output = CVector;
    fn add(self, rhs: &CVector) -> CVector {
        CVector(self.0.iter().zip(&rhs.0).map(|(a, b)| a + b).collect())
    }
}

impl Sub for &CVector {
    type Output = CVector;
    fn sub(self, rhs: &CVector) -> CVector {
        CVector(self.0.iter().zip(&rhs.0).map(|(a, b)| a - b).collect())
    }
}

/// `sum_i a_i * conj(b_i)`.
pub fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x * y.conj()).sum()
}

pub fn norm2(a: &[Complex64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Dense complex matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CMatrix { rows, cols, data: vec![ZERO; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = ONE;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Dimension("matrix must have at least one row and column".into()));
        }
        if rows * cols != data.len() {
            return Err(Error::Dimension(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Range("matrix entries must be finite".into()));
        }
        Ok(CMatrix { rows, cols, data })
    }

    pub fn from_real_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        let data = rows.iter().flatten().map(|&x| Complex64::new(x, 0.0)).collect();
        Self::from_row_major(r, c, data)
    }

    pub fn diag(values: &[Complex64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn diag_real(values: &[f64]) -> Self {
        let v: Vec<_> = values.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        Self::diag(&v)
    }

    pub fn scalar(a: f64) -> Self {
        Self::diag_real(&[a])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[Complex64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> CVector {
        CVector((0..self.rows).map(|i| self[(i, j)]).collect())
    }

    pub fn set_column(&mut self, j: usize, v: &[Complex64]) {
        for (i, &x) in v.iter().enumerate() {
            self[(i, j)] = x;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> CMatrix {
        let mut out = CMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)].conj();
            }
        }
        out
    }

    pub fn scale(&self, s: Complex64) -> CMatrix {
        CMatrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| x * s).collect() }
    }

    pub fn scale_real(&self, s: f64) -> CMatrix {
        self.scale(Complex64::new(s, 0.0))
    }

    /// Sub-block copy `[r0, r0+nr) x [c0, c0+nc)`.
    pub fn block(&self, r0: usize, c0: usize, nr: usize, nc: usize) -> CMatrix {
        let mut out = CMatrix::zeros(nr, nc);
        for i in 0..nr {
            out.data[i * nc..(i + 1) * nc]
                .copy_from_slice(&self.data[(r0 + i) * self.cols + c0..(r0 + i) * self.cols + c0 + nc]);
        }
        out
    }

    pub fn set_block(&mut self, r0: usize, c0: usize, b: &CMatrix) {
        for i in 0..b.rows {
            for j in 0..b.cols {
                self[(r0 + i, c0 + j)] = b[(i, j)];
            }
        }
    }

    /// Accumulate `alpha * b` into the block at `(r0, c0)`.
    pub fn add_block(&mut self, r0: usize, c0: usize, alpha: Complex64, b: &CMatrix) {
        for i in 0..b.rows {
            for j in 0..b.cols {
                self[(r0 + i, c0 + j)] += alpha * b[(i, j)];
            }
        }
    }

    pub fn matvec(&self, x: &[Complex64]) -> Vec<Complex64> {
        let mut y = vec![ZERO; self.rows];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &[Complex64], y: &mut [Complex64]) {
        debug_assert_eq!(x.len(), self.cols);
        for (i, yi) in y.iter_mut().enumerate() {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            let mut acc = ZERO;
            for (a, b) in row.iter().zip(x) {
                acc += a * b;
            }
            *yi = acc;
        }
    }

    /// `M^H x`.
    pub fn adjoint_matvec(&self, x: &[Complex64]) -> Vec<Complex64> {
        debug_assert_eq!(x.len(), self.rows);
        let mut y = vec![ZERO; self.cols];
        for (i, &xi) in x.iter().enumerate() {
            if xi == ZERO {
                continue;
            }
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            for (yj, a) in y.iter_mut().zip(row) {
                *yj += a.conj() * xi;
            }
        }
        y
    }

    pub fn matmul(&self, rhs: &CMatrix) -> Result<CMatrix> {
        if self.cols != rhs.rows {
            return Err(Error::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = CMatrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let orow = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == ZERO {
                    continue;
                }
                let rrow = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                for (o, b) in orow.iter_mut().zip(rrow) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// Maximum absolute column sum.
    pub fn norm_one(&self) -> f64 {
        (0..self.cols).map(|j| (0..self.rows).map(|i| self[(i, j)].norm()).sum::<f64>()).fold(0.0, f64::max)
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.rows).map(|i| self.row(i).iter().map(|z| z.norm()).sum::<f64>()).fold(0.0, f64::max)
    }

    pub fn norm_fro(&self) -> f64 {
        norm2(&self.data)
    }

    pub fn max_abs_diff(&self, other: &CMatrix) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }

    /// Hermitian part `(M + M^H)/2`.
    pub fn hermitian_part(&self) -> CMatrix {
        let mut out = CMatrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(i, j)] = 0.5 * (self[(i, j)] + self[(j, i)].conj());
            }
        }
        out
    }

    /// `D_l^{1/2} M D_r^{-1/2}` for positive diagonal weights.
    pub fn weighted(&self, left: &[f64], right: &[f64]) -> CMatrix {
        let mut out = self.clone();
        for i in 0..self.rows {
            let li = left[i].sqrt();
            for j in 0..self.cols {
                out[(i, j)] *= li / right[j].sqrt();
            }
        }
        out
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = Complex64;
    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        &mut self.data[i * self.cols + j]
    }
}

impl Add for &CMatrix {
    type Output = CMatrix;
    fn add(self, rhs: &CMatrix) -> CMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols), "shape mismatch in add");
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &CMatrix {
    type Output = CMatrix;
    fn sub(self, rhs: &CMatrix) -> CMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols), "shape mismatch in sub");
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Mul for &CMatrix {
    type Output = CMatrix;
    fn mul(self, rhs: &CMatrix) -> CMatrix {
        self.matmul(rhs).expect("shape mismatch in mul")
    }
}

// Degree-m Padé numerator coefficients and the matching backward-error
// thresholds for the 1-norm of the scaled argument.
const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0];
const PADE9: [f64; 10] =
    [17643225600.0, 8821612800.0, 2075673600.0, 302702400.0, 30270240.0, 2162160.0, 110880.0, 3960.0, 90.0, 1.0];
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA: [(f64, usize); 4] =
    [(1.495585217958292e-2, 3), (2.539_398_330_063_23e-1, 5), (9.504178996162932e-1, 7), (2.097847961257068e0, 9)];
const THETA_13: f64 = 5.371920351148152;
const MAX_SQUARINGS: i32 = 64;

/// `e^{tA}` by scaling and squaring with a diagonal Padé approximant.
pub fn expm(a: &CMatrix, t: f64) -> Result<CMatrix> {
    if !a.is_square() {
        return Err(Error::Dimension(format!("expm needs a square matrix, got {}x{}", a.rows, a.cols)));
    }
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::Range(format!("expm time must be finite and nonnegative, got {t}")));
    }
    let n = a.rows;
    let ta = a.scale_real(t);
    let norm = ta.norm_one();
    if norm == 0.0 {
        return Ok(CMatrix::identity(n));
    }

    for &(theta, m) in &THETA {
        if norm <= theta {
            return pade_small(&ta, m);
        }
    }

    let s = if norm > THETA_13 { (norm / THETA_13).log2().ceil() as i32 } else { 0 };
    if s > MAX_SQUARINGS {
        return Err(Error::Range(format!("|tA|_1 = {norm:.3e} is too large for scaling and squaring")));
    }
    let scaled = ta.scale_real(0.5f64.powi(s));
    let mut r = pade13(&scaled)?;
    for _ in 0..s {
        r = &r * &r;
    }
    if !r.is_finite() {
        return Err(Error::Range(format!("matrix exponential overflowed for |tA|_1 = {norm:.3e}")));
    }
    Ok(r)
}

fn pade_small(a: &CMatrix, m: usize) -> Result<CMatrix> {
    let b: &[f64] = match m {
        3 => &PADE3,
        5 => &PADE5,
        7 => &PADE7,
        _ => &PADE9,
    };
    let n = a.rows;
    let id = CMatrix::identity(n);
    let a2 = a * a;
    // even powers I, A^2, A^4, ...
    let mut powers = vec![id.clone(), a2.clone()];
    while powers.len() <= m / 2 {
        let next = powers.last().unwrap() * &a2;
        powers.push(next);
    }
    let mut u_inner = CMatrix::zeros(n, n);
    let mut v = CMatrix::zeros(n, n);
    for (k, p) in powers.iter().enumerate() {
        if 2 * k < m {
            u_inner.add_block(0, 0, Complex64::new(b[2 * k + 1], 0.0), p);
        }
        v.add_block(0, 0, Complex64::new(b[2 * k], 0.0), p);
    }
    let u = a * &u_inner;
    pade_quotient(&u, &v)
}

fn pade13(a: &CMatrix) -> Result<CMatrix> {
    let b = &PADE13;
    let n = a.rows;
    let id = CMatrix::identity(n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let c = |x: f64| Complex64::new(x, 0.0);

    let mut w1 = CMatrix::zeros(n, n);
    w1.add_block(0, 0, c(b[13]), &a6);
    w1.add_block(0, 0, c(b[11]), &a4);
    w1.add_block(0, 0, c(b[9]), &a2);
    let mut w2 = CMatrix::zeros(n, n);
    w2.add_block(0, 0, c(b[7]), &a6);
    w2.add_block(0, 0, c(b[5]), &a4);
    w2.add_block(0, 0, c(b[3]), &a2);
    w2.add_block(0, 0, c(b[1]), &id);
    let mut inner_u = &a6 * &w1;
    inner_u.add_block(0, 0, ONE, &w2);
    let u = a * &inner_u;

    let mut z1 = CMatrix::zeros(n, n);
    z1.add_block(0, 0, c(b[12]), &a6);
    z1.add_block(0, 0, c(b[10]), &a4);
    z1.add_block(0, 0, c(b[8]), &a2);
    let mut v = &a6 * &z1;
    v.add_block(0, 0, c(b[6]), &a6);
    v.add_block(0, 0, c(b[4]), &a4);
    v.add_block(0, 0, c(b[2]), &a2);
    v.add_block(0, 0, c(b[0]), &id);
    pade_quotient(&u, &v)
}

/// `(V - U)^{-1} (V + U)`.
fn pade_quotient(u: &CMatrix, v: &CMatrix) -> Result<CMatrix> {
    let p = v + u;
    let q = v - u;
    Lu::factor(&q)?.solve_matrix(&p)
}

/// LU factorization with partial pivoting, `P M = L U` packed in one matrix.
#[derive(Debug, Clone)]
pub struct Lu {
    lu: CMatrix,
    perm: Vec<usize>,
}

impl Lu {
    /// Pivots below `1e-14 * |M|_inf` are reported as singular.
    pub fn factor(m: &CMatrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Dimension(format!("LU needs a square matrix, got {}x{}", m.rows, m.cols)));
        }
        let n = m.rows;
        let threshold = 1e-14 * m.norm_inf();
        let mut lu = m.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (p, pmax) =
                (k..n)
                    .map(|i| (i, lu[(i, k)].norm()))
                    .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pmax <= threshold || pmax == 0.0 {
                return Err(Error::Singular { pivot: pmax, threshold });
            }
            if p != k {
                perm.swap(p, k);
                for j in 0..n {
                    lu.data.swap(k * n + j, p * n + j);
                }
            }
            let pivot = lu[(k, k)];
            for i in k + 1..n {
                let l = lu[(i, k)] / pivot;
                lu[(i, k)] = l;
                if l == ZERO {
                    continue;
                }
                let (top, bottom) = lu.data.split_at_mut(i * n);
                let krow = &top[k * n + k + 1..k * n + n];
                let irow = &mut bottom[k + 1..n];
                for (x, &y) in irow.iter_mut().zip(krow) {
                    *x -= l * y;
                }
            }
        }
        Ok(Lu { lu, perm })
    }

    pub fn dim(&self) -> usize {
        self.lu.rows
    }

    pub fn det(&self) -> Complex64 {
        let n = self.lu.rows;
        let mut d: Complex64 = (0..n).map(|k| self.lu[(k, k)]).product();
        let mut seen = vec![false; n];
        for start in 0..n {
            let mut len = 0;
            let mut i = start;
            while !seen[i] {
                seen[i] = true;
                i = self.perm[i];
                len += 1;
            }
            if len > 0 && len % 2 == 0 {
                d = -d;
            }
        }
        d
    }

    pub fn solve_in_place(&self, b: &mut [Complex64]) {
        let n = self.lu.rows;
        let mut x: Vec<Complex64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let row = self.lu.row(i);
            let mut acc = x[i];
            for j in 0..i {
                acc -= row[j] * x[j];
            }
            x[i] = acc;
        }
        for i in (0..n).rev() {
            let row = self.lu.row(i);
            let mut acc = x[i];
            for j in i + 1..n {
                acc -= row[j] * x[j];
            }
            x[i] = acc / row[i];
        }
        b.copy_from_slice(&x);
    }

    pub fn solve(&self, b: &CVector) -> Result<CVector> {
        if b.len() != self.dim() {
            return Err(Error::Dimension(format!("rhs has length {}, expected {}", b.len(), self.dim())));
        }
        let mut x = b.0.clone();
        self.solve_in_place(&mut x);
        Ok(CVector(x))
    }

    pub fn solve_matrix(&self, b: &CMatrix) -> Result<CMatrix> {
        if b.rows != self.dim() {
            return Err(Error::Dimension(format!("rhs has {} rows, expected {}", b.rows, self.dim())));
        }
        let mut out = CMatrix::zeros(b.rows, b.cols);
        let mut col = vec![ZERO; b.rows];
        for j in 0..b.cols {
            for i in 0..b.rows {
                col[i] = b[(i, j)];
            }
            self.solve_in_place(&mut col);
            out.set_column(j, &col);
        }
        Ok(out)
    }
}

/// Solve `M x = b` by LU with partial pivoting.
pub fn solve(m: &CMatrix, b: &CVector) -> Result<CVector> {
    if !m.is_square() || m.rows != b.len() {
        return Err(Error::Dimension(format!(
            "solve needs square M matching b, got {}x{} and {}",
            m.rows,
            m.cols,
            b.len()
        )));
    }
    Lu::factor(m)?.solve(b)
}

const NORM_MAX_ITERS: usize = 20_000;
const NORM_SEED: u64 = 42;

/// Largest singular value by power iteration on `M^H M`.
pub fn op_norm(m: &CMatrix) -> f64 {
    top_singular_pair(m).0
}

/// Largest singular value and a matching right singular vector.
///
/// Starts from the normalized all-ones vector. If that start is (numerically)
/// in the null space of `M`, it restarts from a seeded random vector.
pub fn top_singular_pair(m: &CMatrix) -> (f64, CVector) {
    let n = m.cols;
    let scale = m.norm_fro();
    let start = vec![Complex64::new(1.0 / (n as f64).sqrt(), 0.0); n];
    if scale == 0.0 {
        return (0.0, CVector(start));
    }
    let (est, v) = power_iterate(m, start);
    if est > 1e-12 * scale {
        return (est, CVector(v));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(NORM_SEED);
    let mut v: Vec<Complex64> =
        (0..n).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
    let nv = norm2(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    let (est, v) = power_iterate(m, v);
    (est, CVector(v))
}

fn power_iterate(m: &CMatrix, mut v: Vec<Complex64>) -> (f64, Vec<Complex64>) {
    let mut w = vec![ZERO; m.rows];
    let mut prev = 0.0;
    let mut best = 0.0f64;
    for _ in 0..NORM_MAX_ITERS {
        m.matvec_into(&v, &mut w);
        // Rayleigh quotient of M^H M at the unit vector v
        let rq = w.iter().map(|z| z.norm_sqr()).sum::<f64>();
        let y = m.adjoint_matvec(&w);
        let ny = norm2(&y);
        // rq <= |M^H M v| <= sigma_max^2
        best = best.max(ny).max(rq);
        if ny == 0.0 {
            return (rq.sqrt(), v);
        }
        let resid = (ny * ny - rq * rq).max(0.0).sqrt();
        let converged = (rq - prev).abs() <= 1e-15 * rq || resid <= 1e-10 * rq;
        prev = rq;
        for (vi, yi) in v.iter_mut().zip(&y) {
            *vi = yi / ny;
        }
        if converged {
            return (ny.sqrt(), v);
        }
    }
    (best.sqrt(), v)
}

/// Operator norm of `M` between spaces with diagonal metrics, i.e. the
/// spectral norm of `W_out^{1/2} M W_in^{-1/2}`.
pub fn weighted_op_norm(m: &CMatrix, w_out: &[f64], w_in: &[f64]) -> f64 {
    op_norm(&m.weighted(w_out, w_in))
}

/// Largest eigenvalue of a Hermitian matrix by shifted inverse power
/// iteration. The shift is a Gershgorin upper bound, so the iteration
/// locks onto the top of the spectrum.
pub fn hermitian_max_eigenvalue(h: &CMatrix) -> Result<f64> {
    if !h.is_square() {
        return Err(Error::Dimension("hermitian_max_eigenvalue needs a square matrix".into()));
    }
    let n = h.rows;
    let upper = (0..n)
        .map(|i| {
            let row = h.row(i);
            row[i].re + row.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, z)| z.norm()).sum::<f64>()
        })
        .fold(f64::NEG_INFINITY, f64::max);
    let mut shift = upper + 1e-6 * (1.0 + upper.abs());
    let lu = loop {
        let shifted = &CMatrix::identity(n).scale_real(shift) - h;
        match Lu::factor(&shifted) {
            Ok(lu) => break lu,
            Err(Error::Singular { .. }) => shift += 1e-3 * (1.0 + shift.abs()),
            Err(e) => return Err(e),
        }
    };
    let mut v = vec![Complex64::new(1.0 / (n as f64).sqrt(), 0.0); n];
    let mut prev = f64::INFINITY;
    let mut estimate = upper;
    for _ in 0..NORM_MAX_ITERS {
        let mut y = v.clone();
        lu.solve_in_place(&mut y);
        // v^H (shift - H)^{-1} v = 1/(shift - lambda) at convergence
        let q = dot(&y, &v).re;
        estimate = shift - 1.0 / q;
        let ny = norm2(&y);
        for (vi, yi) in v.iter_mut().zip(&y) {
            *vi = yi / ny;
        }
        if (estimate - prev).abs() <= 1e-13 * (1.0 + estimate.abs()) {
            break;
        }
        prev = estimate;
    }
    // polish with the Rayleigh quotient of H itself
    let hv = h.matvec(&v);
    let rq = dot(&hv, &v).re;
    Ok(if (rq - estimate).abs() < 1e-6 * (1.0 + rq.abs()) { rq } else { estimate })
}

/// Eigenvalue of a general square matrix closest to `shift`, by inverse
/// iteration. Returns the eigenvalue and the final residual `|Mv - mu v|`.
pub fn nearest_eigenvalue(m: &CMatrix, shift: Complex64) -> Result<(Complex64, f64)> {
    if !m.is_square() {
        return Err(Error::Dimension("nearest_eigenvalue needs a square matrix".into()));
    }
    let n = m.rows;
    let mut sigma = shift;
    let lu = loop {
        let shifted = &m.clone() - &CMatrix::identity(n).scale(sigma);
        match Lu::factor(&shifted) {
            Ok(lu) => break lu,
            // the shift is itself an eigenvalue to working precision
            Err(Error::Singular { .. }) => sigma += Complex64::new(1e-9 * (1.0 + sigma.norm()), 0.0),
            Err(e) => return Err(e),
        }
    };
    let mut v = vec![Complex64::new(1.0 / (n as f64).sqrt(), 0.0); n];
    let mut mu = sigma;
    for _ in 0..500 {
        let mut y = v.clone();
        lu.solve_in_place(&mut y);
        let ny = norm2(&y);
        for (vi, yi) in v.iter_mut().zip(&y) {
            *vi = yi / ny;
        }
        let mv = m.matvec(&v);
        let next = dot(&mv, &v);
        let resid = norm2(&mv.iter().zip(&v).map(|(a, b)| a - next * b).collect::<Vec<_>>());
        let done = (next - mu).norm() <= 1e-13 * (1.0 + next.norm()) || resid <= 1e-12 * (1.0 + next.norm());
        mu = next;
        if done {
            return Ok((mu, resid));
        }
    }
    let mv = m.matvec(&v);
    let resid = norm2(&mv.iter().zip(&v).map(|(a, b)| a - mu * b).collect::<Vec<_>>());
    Ok((mu, resid))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn random_matrix(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> CMatrix {
        let data =
            (0..n * n).map(|_| Complex64::new(rng.gen_range(-scale..scale), rng.gen_range(-scale..scale))).collect();
        CMatrix::from_row_major(n, n, data).unwrap()
    }

    /// Truncated Taylor series with many squarings, used as an independent
    /// reference for small matrices.
    fn taylor_expm(a: &CMatrix, t: f64) -> CMatrix {
        let n = a.rows();
        let norm = a.norm_one() * t;
        let s = if norm > 0.5 { (2.0 * norm).log2().ceil() as i32 } else { 0 };
        let x = a.scale_real(t / 2f64.powi(s));
        let mut term = CMatrix::identity(n);
        let mut sum = CMatrix::identity(n);
        for k in 1..30 {
            term = (&term * &x).scale_real(1.0 / k as f64);
            sum = &sum + &term;
        }
        for _ in 0..s {
            sum = &sum * &sum;
        }
        sum
    }

    #[test]
    fn expm_of_zero_is_identity() {
        let z = CMatrix::zeros(3, 3);
        assert_eq!(expm(&z, 2.5).unwrap(), CMatrix::identity(3));
    }

    #[test]
    fn expm_scalar_decay() {
        let e = expm(&CMatrix::scalar(-1.0), 1.0).unwrap();
        assert!((e[(0, 0)] - c((-1.0f64).exp())).norm() < 1e-15);
    }

    #[test]
    fn expm_matches_taylor_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &scale in &[0.01, 0.3, 2.0, 6.0] {
            let a = random_matrix(&mut rng, 4, scale);
            let e = expm(&a, 1.0).unwrap();
            let r = taylor_expm(&a, 1.0);
            assert!(e.max_abs_diff(&r) <= 1e-11 * op_norm(&r).max(1.0), "scale {scale}");
        }
    }

    #[test]
    fn expm_semigroup_identity_on_random_4x4() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_matrix(&mut rng, 4, 1.0);
        let lhs = expm(&a, 1.0).unwrap();
        let rhs = &expm(&a, 0.3).unwrap() * &expm(&a, 0.7).unwrap();
        assert!(op_norm(&(&lhs - &rhs)) <= 1e-10);
    }

    #[test]
    fn expm_rejects_bad_input() {
        assert!(matches!(expm(&CMatrix::zeros(2, 3), 1.0), Err(Error::Dimension(_))));
        assert!(matches!(expm(&CMatrix::scalar(1.0), -1.0), Err(Error::Range(_))));
        assert!(matches!(expm(&CMatrix::scalar(1e30), 1.0), Err(Error::Range(_))));
    }

    #[test]
    fn expm_nilpotent_exact() {
        let n = CMatrix::from_real_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
        let e = expm(&n, 3.0).unwrap();
        let expected = CMatrix::from_real_rows(&[vec![1.0, 3.0], vec![0.0, 1.0]]).unwrap();
        assert!(e.max_abs_diff(&expected) < 1e-14);
    }

    #[test]
    fn solve_identity_and_scalar() {
        let b = CVector(vec![Complex64::new(1.0, 2.0), c(-3.0)]);
        assert_eq!(solve(&CMatrix::identity(2), &b).unwrap(), b);
        let x = solve(&CMatrix::scalar(2.0), &CVector::from_real(&[1.0])).unwrap();
        assert_eq!(x[0], c(0.5));
    }

    #[test]
    fn solve_round_trip_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = &random_matrix(&mut rng, 5, 1.0) + &CMatrix::identity(5).scale_real(4.0);
        let x0 = CVector((0..5).map(|_| Complex64::new(rng.gen(), rng.gen())).collect());
        let b = CVector(m.matvec(&x0.0));
        let x = solve(&m, &b).unwrap();
        assert!((&x - &x0).norm() <= 1e-10);
    }

    #[test]
    fn solve_detects_singularity() {
        let m = CMatrix::from_real_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap();
        assert!(matches!(solve(&m, &CVector::from_real(&[1.0, 1.0])), Err(Error::Singular { .. })));
    }

    #[test]
    fn determinant_with_pivoting() {
        let swap = CMatrix::from_real_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert!((Lu::factor(&swap).unwrap().det() - c(-1.0)).norm() < 1e-15);
        // cofactor expansion: 2(3*1 - 0*4) - 1(1*1 - 0*5) + 7(1*4 - 3*5) = -72
        let m = CMatrix::from_real_rows(&[vec![2.0, 1.0, 7.0], vec![1.0, 3.0, 0.0], vec![5.0, 4.0, 1.0]]).unwrap();
        assert!((Lu::factor(&m).unwrap().det() - c(-72.0)).norm() < 1e-12);
    }

    #[test]
    fn op_norm_simple_cases() {
        assert!((op_norm(&CMatrix::identity(3)) - 1.0).abs() < 1e-12);
        assert!((op_norm(&CMatrix::diag_real(&[3.0, -4.0])) - 4.0).abs() < 1e-8);
        assert_eq!(op_norm(&CMatrix::zeros(2, 2)), 0.0);
    }

    #[test]
    fn op_norm_handles_orthogonal_start() {
        // the all-ones start lies in the kernel
        let m = CMatrix::from_real_rows(&[vec![1.0, -1.0], vec![1.0, -1.0]]).unwrap();
        assert!((op_norm(&m) - 2.0).abs() < 1e-10);
    }

    #[test]
    fn op_norm_dominates_random_unit_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = random_matrix(&mut rng, 6, 1.0);
        let norm = op_norm(&m);
        let mut best = 0.0f64;
        for _ in 0..10_000 {
            let v: Vec<Complex64> =
                (0..6).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
            let nv = norm2(&v);
            best = best.max(norm2(&m.matvec(&v)) / nv);
        }
        assert!(best <= norm + 1e-12);
        // the Monte-Carlo maximum in 6 complex dimensions gets close but not exact
        assert!(norm - best < 0.15 * norm, "norm {norm}, sampled {best}");
    }

    #[test]
    fn op_norm_matches_hermitian_eigenvalue() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = random_matrix(&mut rng, 6, 1.0);
        let gram = &m.adjoint() * &m;
        let top = hermitian_max_eigenvalue(&gram).unwrap();
        assert!((op_norm(&m) - top.sqrt()).abs() <= 1e-8 * top.sqrt());
    }

    #[test]
    fn nearest_eigenvalue_of_diagonal() {
        let m = CMatrix::diag(&[c(1.0), Complex64::new(0.0, 2.0), c(-3.0)]);
        let (mu, _) = nearest_eigenvalue(&m, Complex64::new(0.1, 1.7)).unwrap();
        assert!((mu - Complex64::new(0.0, 2.0)).norm() < 1e-10);
    }

    #[test]
    fn hermitian_max_eigenvalue_diagonal() {
        let m = CMatrix::diag_real(&[-1.0, 0.25, -7.0]);
        assert!((hermitian_max_eigenvalue(&m).unwrap() - 0.25).abs() < 1e-10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn expm_semigroup_law(seed in 0u64..10_000, s in 0.0f64..2.0, t in 0.0f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut a = random_matrix(&mut rng, 3, 1.0);
            let na = op_norm(&a);
            if na > 10.0 {
                a = a.scale_real(10.0 / na);
            }
            let lhs = expm(&a, s + t).unwrap();
            let rhs = &expm(&a, s).unwrap() * &expm(&a, t).unwrap();
            prop_assert!(op_norm(&(&lhs - &rhs)) <= 1e-10 * op_norm(&lhs).max(1.0));
        }

        #[test]
        fn op_norm_submultiplicative(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_matrix(&mut rng, 4, 1.0);
            let b = random_matrix(&mut rng, 4, 1.0);
            prop_assert!(op_norm(&(&a * &b)) <= op_norm(&a) * op_norm(&b) + 1e-8);
        }

        #[test]
        fn solve_matmul_round_trip(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = &random_matrix(&mut rng, 5, 1.0) + &CMatrix::identity(5).scale_real(5.0);
            let x0 = CVector((0..5).map(|_| Complex64::new(rng.gen(), rng.gen())).collect());
            let b = CVector(m.matvec(&x0.0));
            let x = solve(&m, &b).unwrap();
            let resid = norm2(&m.matvec(&x.0).iter().zip(&b.0).map(|(p, q)| p - q).collect::<Vec<_>>());
            prop_assert!(resid <= 1e-10 * b.norm());
        }
    }
}
