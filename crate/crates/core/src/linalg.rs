//! Dense complex matrices and the complex Schur decomposition.
//!
//! The Schur routine reduces to upper Hessenberg form with Householder
//! reflectors and then runs single-shift QR sweeps (Wilkinson shifts,
//! Givens rotations) until every subdiagonal entry has deflated. The
//! result is always truly upper triangular, also for real input with
//! complex-conjugate eigenvalue pairs.

use std::fmt;
use std::ops::{Index, IndexMut};

use num_complex::Complex64;
use thiserror::Error;

pub type C64 = Complex64;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// Relative size below which a subdiagonal entry is treated as zero.
pub const DEFLATION_TOL: f64 = 1e-14;

/// QR sweeps allowed per eigenvalue before giving up.
pub const DEFAULT_MAX_ITER: usize = 30;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("dimension mismatch: {op} got {left:?} and {right:?}")]
    Dimension {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix has {len} entries, expected {rows}x{cols}")]
    BadLength { rows: usize, cols: usize, len: usize },
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("Schur iteration did not converge: {converged} of {total} eigenvalues deflated")]
    NoConvergence { converged: usize, total: usize },
}

/// Dense row-major complex matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![ZERO; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = ONE;
        }
        m
    }

    /// Builds a matrix from row-major data, rejecting NaN/Inf entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self, LinalgError> {
        if data.len() != rows * cols {
            return Err(LinalgError::BadLength {
                rows,
                cols,
                len: data.len(),
            });
        }
        if let Some(idx) = data.iter().position(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(LinalgError::NonFinite {
                row: idx / cols.max(1),
                col: idx % cols.max(1),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_real(rows: usize, cols: usize, data: &[f64]) -> Result<Self, LinalgError> {
        Matrix::from_vec(rows, cols, data.iter().map(|&x| C64::new(x, 0.0)).collect())
    }

    /// Convenience constructor for small literal matrices.
    pub fn from_rows(rows: &[Vec<C64>]) -> Result<Self, LinalgError> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(LinalgError::BadLength {
                    rows: r,
                    cols: c,
                    len: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Matrix::from_vec(r, c, data)
    }

    pub fn from_real_rows(rows: &[&[f64]]) -> Result<Self, LinalgError> {
        let owned: Vec<Vec<C64>> = rows
            .iter()
            .map(|r| r.iter().map(|&x| C64::new(x, 0.0)).collect())
            .collect();
        Matrix::from_rows(&owned)
    }

    pub fn diagonal(diag: &[C64]) -> Self {
        let mut m = Matrix::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[C64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn diag(&self) -> Vec<C64> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)].conj();
            }
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn scale(&self, s: C64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&z| z * s).collect(),
        }
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    fn zip_with(
        &self,
        other: &Matrix,
        op: &'static str,
        f: impl Fn(C64, C64) -> C64,
    ) -> Result<Matrix, LinalgError> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(LinalgError::Dimension {
                op,
                left: (self.rows, self.cols),
                right: (other.rows, other.cols),
            });
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// Copies `block` into `self` with its top-left corner at (r0, c0).
    pub fn set_block(&mut self, r0: usize, c0: usize, block: &Matrix) {
        assert!(r0 + block.rows <= self.rows && c0 + block.cols <= self.cols);
        for i in 0..block.rows {
            let dst = (r0 + i) * self.cols + c0;
            self.data[dst..dst + block.cols].copy_from_slice(block.row(i));
        }
    }

    pub fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Matrix {
        let mut out = Matrix::zeros(rows, cols);
        for i in 0..rows {
            let src = (r0 + i) * self.cols + c0;
            out.data[i * cols..(i + 1) * cols].copy_from_slice(&self.data[src..src + cols]);
        }
        out
    }

    pub fn is_upper_triangular(&self) -> bool {
        (0..self.rows).all(|i| (0..i.min(self.cols)).all(|j| self[(i, j)] == ZERO))
    }

    /// Largest modulus of any entry strictly above the diagonal.
    pub fn max_abs_below_diagonal(&self) -> f64 {
        let mut m = 0.0f64;
        for i in 0..self.rows {
            for j in 0..i.min(self.cols) {
                m = m.max(self[(i, j)].norm());
            }
        }
        m
    }

    pub fn is_real(&self) -> bool {
        self.data.iter().all(|z| z.im == 0.0)
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = C64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            write!(f, "  ")?;
            for z in self.row(i) {
                write!(f, "{:>12.5e}{:+.5e}i ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

/// Dense product `a * b`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix, LinalgError> {
    if a.cols != b.rows {
        return Err(LinalgError::Dimension {
            op: "matmul",
            left: (a.rows, a.cols),
            right: (b.rows, b.cols),
        });
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for (k, &aik) in a.row(i).iter().enumerate() {
            if aik == ZERO {
                continue;
            }
            for (o, &bkj) in out_row.iter_mut().zip(b.row(k)) {
                *o += aik * bkj;
            }
        }
    }
    Ok(out)
}

pub fn matvec(a: &Matrix, x: &[C64]) -> Result<Vec<C64>, LinalgError> {
    if a.cols != x.len() {
        return Err(LinalgError::Dimension {
            op: "matvec",
            left: (a.rows, a.cols),
            right: (x.len(), 1),
        });
    }
    Ok((0..a.rows)
        .map(|i| a.row(i).iter().zip(x).map(|(&aij, &xj)| aij * xj).sum())
        .collect())
}

/// Inverse of a unitary matrix, i.e. its conjugate transpose.
pub fn unitary_inverse(v: &Matrix) -> Result<Matrix, LinalgError> {
    if !v.is_square() {
        return Err(LinalgError::NotSquare {
            rows: v.rows,
            cols: v.cols,
        });
    }
    Ok(v.adjoint())
}

/// Dense row-major real matrix; used for the Galerkin tables and operators.
#[derive(Clone, PartialEq)]
pub struct RealMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl RealMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        RealMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if data.len() != rows * cols {
            return Err(LinalgError::BadLength {
                rows,
                cols,
                len: data.len(),
            });
        }
        if let Some(idx) = data.iter().position(|x| !x.is_finite()) {
            return Err(LinalgError::NonFinite {
                row: idx / cols.max(1),
                col: idx % cols.max(1),
            });
        }
        Ok(RealMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, LinalgError> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|row| row.len() != c) {
            return Err(LinalgError::BadLength {
                rows: r,
                cols: c,
                len: bad.len(),
            });
        }
        RealMatrix::from_vec(r, c, rows.into_iter().flatten().collect())
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_complex(&self) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| C64::new(x, 0.0)).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> RealMatrix {
        RealMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| x * s).collect(),
        }
    }

    /// `self + s * other`.
    pub fn add_scaled(&self, s: f64, other: &RealMatrix) -> Result<RealMatrix, LinalgError> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(LinalgError::Dimension {
                op: "add_scaled",
                left: (self.rows, self.cols),
                right: (other.rows, other.cols),
            });
        }
        Ok(RealMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a + s * b)
                .collect(),
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|x| x.abs()).fold(0.0, f64::max)
    }

    pub fn nonzeros(&self) -> usize {
        self.data.iter().filter(|&&x| x != 0.0).count()
    }
}

impl Index<(usize, usize)> for RealMatrix {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for RealMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for RealMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "RealMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            write!(f, "  ")?;
            for x in self.row(i) {
                write!(f, "{:>12.5e} ", x)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

/// `A = V T V*` with `T` upper triangular and `V` unitary.
#[derive(Debug, Clone)]
pub struct SchurForm {
    pub t: Matrix,
    pub v: Matrix,
    /// Frobenius norm of the decomposed matrix.
    pub source_norm: f64,
}

impl SchurForm {
    pub fn eigenvalues(&self) -> Vec<C64> {
        self.t.diag()
    }

    /// `‖V V* − I‖_F`.
    pub fn unitarity_residual(&self) -> f64 {
        let vvh = matmul(&self.v, &self.v.adjoint()).expect("square");
        vvh.sub(&Matrix::identity(self.v.rows))
            .expect("square")
            .frobenius_norm()
    }

    /// `‖V T V* − A‖_F`.
    pub fn reconstruction_residual(&self, a: &Matrix) -> f64 {
        let vt = matmul(&self.v, &self.t).expect("square");
        let vtv = matmul(&vt, &self.v.adjoint()).expect("square");
        vtv.sub(a).map(|d| d.frobenius_norm()).unwrap_or(f64::INFINITY)
    }
}

/// Complex Schur decomposition.
///
/// `max_iter` is the QR-sweep budget per eigenvalue; the total budget is
/// `max_iter * n`.
pub fn schur_decompose(a: &Matrix, max_iter: usize) -> Result<SchurForm, LinalgError> {
    if !a.is_square() {
        return Err(LinalgError::NotSquare {
            rows: a.rows,
            cols: a.cols,
        });
    }
    if let Some(idx) = a
        .data
        .iter()
        .position(|z| !(z.re.is_finite() && z.im.is_finite()))
    {
        return Err(LinalgError::NonFinite {
            row: idx / a.cols,
            col: idx % a.cols,
        });
    }
    let n = a.rows;
    let source_norm = a.frobenius_norm();
    let mut h = a.clone();
    let mut q = Matrix::identity(n);
    if n == 0 {
        return Ok(SchurForm {
            t: h,
            v: q,
            source_norm,
        });
    }

    hessenberg_reduce(&mut h, &mut q);
    shifted_qr(&mut h, &mut q, max_iter.max(1) * n, source_norm)?;

    for i in 1..n {
        for j in 0..i {
            h[(i, j)] = ZERO;
        }
    }
    Ok(SchurForm {
        t: h,
        v: q,
        source_norm,
    })
}

/// Householder reduction `H = Q* A Q` to upper Hessenberg form.
fn hessenberg_reduce(h: &mut Matrix, q: &mut Matrix) {
    let n = h.rows;
    if n < 3 {
        return;
    }
    let mut v = vec![ZERO; n];
    for k in 0..n - 2 {
        let norm: f64 = (k + 1..n).map(|r| h[(r, k)].norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let x0 = h[(k + 1, k)];
        let phase = if x0.norm() == 0.0 { ONE } else { x0 / x0.norm() };
        let alpha = -phase * norm;

        for r in 0..n {
            v[r] = ZERO;
        }
        v[k + 1] = x0 - alpha;
        for r in k + 2..n {
            v[r] = h[(r, k)];
        }
        let vnorm: f64 = v[k + 1..].iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if vnorm == 0.0 {
            continue;
        }
        for z in v[k + 1..].iter_mut() {
            *z /= vnorm;
        }

        // H <- (I - 2 v v*) H
        for c in k..n {
            let dot: C64 = (k + 1..n).map(|r| v[r].conj() * h[(r, c)]).sum();
            let dot = dot * 2.0;
            for r in k + 1..n {
                let vr = v[r];
                h[(r, c)] -= vr * dot;
            }
        }
        // H <- H (I - 2 v v*)
        for r in 0..n {
            let dot: C64 = (k + 1..n).map(|c| h[(r, c)] * v[c]).sum();
            let dot = dot * 2.0;
            for c in k + 1..n {
                let vc = v[c].conj();
                h[(r, c)] -= dot * vc;
            }
        }
        // Q <- Q (I - 2 v v*)
        for r in 0..n {
            let dot: C64 = (k + 1..n).map(|c| q[(r, c)] * v[c]).sum();
            let dot = dot * 2.0;
            for c in k + 1..n {
                let vc = v[c].conj();
                q[(r, c)] -= dot * vc;
            }
        }
        h[(k + 1, k)] = alpha;
        for r in k + 2..n {
            h[(r, k)] = ZERO;
        }
    }
}

/// Rotation `G = [[c̄, s̄], [−s, c]]` with `G (a, b)ᵀ = (r, 0)ᵀ`.
#[derive(Clone, Copy)]
struct Givens {
    c: C64,
    s: C64,
}

impl Givens {
    fn zeroing(a: C64, b: C64) -> Givens {
        let r = (a.norm_sqr() + b.norm_sqr()).sqrt();
        if r == 0.0 {
            Givens { c: ONE, s: ZERO }
        } else {
            Givens { c: a / r, s: b / r }
        }
    }
}

fn wilkinson_shift(a: C64, b: C64, c: C64, d: C64) -> C64 {
    let delta = (a - d) * 0.5;
    let bc = b * c;
    let root = (delta * delta + bc).sqrt();
    let plus = delta + root;
    let minus = delta - root;
    let denom = if plus.norm() >= minus.norm() { plus } else { minus };
    if denom.norm() == 0.0 {
        d
    } else {
        d - bc / denom
    }
}

fn shifted_qr(
    h: &mut Matrix,
    q: &mut Matrix,
    budget: usize,
    source_norm: f64,
) -> Result<(), LinalgError> {
    let n = h.rows;
    let fallback_scale = source_norm.max(f64::MIN_POSITIVE);
    let mut hi = n - 1;
    let mut its = 0usize;
    let mut total = 0usize;
    let mut rotations: Vec<Givens> = Vec::with_capacity(n);

    while hi > 0 {
        let mut lo = hi;
        while lo > 0 {
            let sub = h[(lo, lo - 1)].norm();
            let diag = h[(lo - 1, lo - 1)].norm() + h[(lo, lo)].norm();
            let scale = if diag > 0.0 { diag } else { fallback_scale };
            if sub <= DEFLATION_TOL * scale || sub < f64::MIN_POSITIVE {
                h[(lo, lo - 1)] = ZERO;
                break;
            }
            lo -= 1;
        }
        if lo == hi {
            hi -= 1;
            its = 0;
            continue;
        }
        if total >= budget {
            return Err(LinalgError::NoConvergence {
                converged: n - 1 - hi,
                total: n,
            });
        }
        its += 1;
        total += 1;

        let mu = if its.is_multiple_of(10) {
            // exceptional shift to break cycles
            h[(hi, hi)] + C64::new(0.75 * h[(hi, hi - 1)].norm(), 0.0)
        } else {
            wilkinson_shift(
                h[(hi - 1, hi - 1)],
                h[(hi - 1, hi)],
                h[(hi, hi - 1)],
                h[(hi, hi)],
            )
        };

        for k in lo..=hi {
            h[(k, k)] -= mu;
        }
        rotations.clear();
        for k in lo..hi {
            let g = Givens::zeroing(h[(k, k)], h[(k + 1, k)]);
            for c in k..n {
                let x = h[(k, c)];
                let y = h[(k + 1, c)];
                h[(k, c)] = g.c.conj() * x + g.s.conj() * y;
                h[(k + 1, c)] = -g.s * x + g.c * y;
            }
            h[(k + 1, k)] = ZERO;
            rotations.push(g);
        }
        for (off, g) in rotations.iter().enumerate() {
            let k = lo + off;
            for r in 0..=(k + 1) {
                let x = h[(r, k)];
                let y = h[(r, k + 1)];
                h[(r, k)] = x * g.c + y * g.s;
                h[(r, k + 1)] = -x * g.s.conj() + y * g.c.conj();
            }
            for r in 0..n {
                let x = q[(r, k)];
                let y = q[(r, k + 1)];
                q[(r, k)] = x * g.c + y * g.s;
                q[(r, k + 1)] = -x * g.s.conj() + y * g.c.conj();
            }
        }
        for k in lo..=hi {
            h[(k, k)] += mu;
        }
    }
    Ok(())
}
