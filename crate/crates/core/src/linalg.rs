//! Small dense real linear algebra: determinants, adjugates and solves.
//!
//! Every truncated normal form in this crate is built from an `n x n` matrix
//! and a handful of `n`-vectors with `n` rarely above six, so everything here
//! is plain row-major `Vec<f64>` storage with no BLAS.

use std::fmt;
use std::ops::{Deref, DerefMut, Index, IndexMut};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest dimension for which adjugates are formed by explicit cofactor
/// expansion of every minor.
pub const COFACTOR_MAX_DIM: usize = 4;

/// Relative singularity threshold: `|det| <= SINGULAR_RTOL * scale^n` with
/// `scale = max(1, |A|_max)`.
pub const SINGULAR_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("matrix is singular: |det| = {det:e} <= threshold {threshold:e}")]
    SingularMatrix { det: f64, threshold: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("matrix dimension must be at least 1")]
    Empty,
    #[error("non-finite entry at index {index}")]
    NonFinite { index: usize },
}

/// A real column vector.
#[derive(Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(data: Vec<f64>) -> Self {
        Vector(data)
    }

    pub fn zeros(n: usize) -> Self {
        Vector(vec![0.0; n])
    }

    /// The `i`-th standard basis vector of `R^n` (zero based).
    pub fn unit(n: usize, i: usize) -> Self {
        let mut v = Self::zeros(n);
        v.0[i] = 1.0;
        v
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        dot(&self.0, other)
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, factor: f64) -> Vector {
        Vector(self.0.iter().map(|v| v * factor).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl fmt::Debug for Vector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.0.iter()).finish()
    }
}

impl fmt::Display for Vector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            // Adding zero turns -0 into 0.
            write!(f, "{}", v + 0.0)?;
        }
        write!(f, ")")
    }
}

impl Deref for Vector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Vector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for Vector {
    fn from(v: Vec<f64>) -> Self {
        Vector(v)
    }
}

impl From<&[f64]> for Vector {
    fn from(v: &[f64]) -> Self {
        Vector(v.to_vec())
    }
}

impl<const N: usize> From<[f64; N]> for Vector {
    fn from(v: [f64; N]) -> Self {
        Vector(v.to_vec())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Dense square matrix stored row-major.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    /// Builds a matrix from row-major entries.
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if n == 0 {
            return Err(LinalgError::Empty);
        }
        if data.len() != n * n {
            return Err(LinalgError::DimensionMismatch {
                expected: n * n,
                found: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite { index });
        }
        Ok(SquareMatrix { n, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, LinalgError> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for row in rows {
            let row = row.as_ref();
            if row.len() != n {
                return Err(LinalgError::DimensionMismatch {
                    expected: n,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(n, data)
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn zeros(n: usize) -> Self {
        assert!(n > 0, "matrix dimension must be at least 1");
        SquareMatrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn column(&self, j: usize) -> Vector {
        (0..self.n).map(|i| self[(i, j)]).collect::<Vec<_>>().into()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.n).map(<[f64]>::to_vec).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vector {
        let mut out = vec![0.0; self.n];
        self.mul_vec_into(x, &mut out);
        out.into()
    }

    /// `out = self * x`
    pub fn mul_vec_into(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(self.row(i), x);
        }
    }

    /// Row vector times matrix, `x^T * self`.
    pub fn left_mul_vec(&self, x: &[f64]) -> Vector {
        assert_eq!(x.len(), self.n);
        let mut out = vec![0.0; self.n];
        for (i, xi) in x.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += xi * a;
            }
        }
        out.into()
    }

    pub fn matmul(&self, other: &SquareMatrix) -> SquareMatrix {
        assert_eq!(self.n, other.n);
        let n = self.n;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn scaled(&self, factor: f64) -> SquareMatrix {
        SquareMatrix {
            n: self.n,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    /// `I - self`
    pub fn identity_minus(&self) -> SquareMatrix {
        let mut m = self.scaled(-1.0);
        for i in 0..self.n {
            m[(i, i)] += 1.0;
        }
        m
    }

    /// `self + c e_1^T`: adds `c` to the first column.
    pub fn with_first_column_shifted(&self, c: &[f64]) -> SquareMatrix {
        assert_eq!(c.len(), self.n);
        let mut m = self.clone();
        for (i, ci) in c.iter().enumerate() {
            m[(i, 0)] += ci;
        }
        m
    }

    /// Largest absolute entry-wise difference outside column `skip`.
    pub fn max_diff_outside_column(&self, other: &SquareMatrix, skip: usize) -> f64 {
        assert_eq!(self.n, other.n);
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for j in (0..self.n).filter(|&j| j != skip) {
                worst = worst.max((self[(i, j)] - other[(i, j)]).abs());
            }
        }
        worst
    }

    fn scale(&self) -> f64 {
        self.max_abs().max(1.0)
    }

    /// Scale-aware singularity threshold for this matrix.
    pub fn singular_threshold(&self) -> f64 {
        SINGULAR_RTOL * self.scale().powi(self.n as i32)
    }

    pub fn is_singular(&self) -> bool {
        self.determinant().abs() <= self.singular_threshold()
    }

    /// Determinant by Gaussian elimination with partial pivoting.
    pub fn determinant(&self) -> f64 {
        match Lu::factor(self) {
            Some(lu) => lu.determinant(),
            None => 0.0,
        }
    }

    /// The adjugate, `adj(A)_{ij} = (-1)^{i+j} m_{ji}`.
    ///
    /// Small matrices use explicit cofactors. Larger ones use `det(A) A^{-1}`
    /// when `A` is comfortably nonsingular and fall back to cofactors
    /// otherwise, so the result is always available.
    pub fn adjugate(&self) -> SquareMatrix {
        let n = self.n;
        if n == 1 {
            return SquareMatrix::identity(1);
        }
        if n > COFACTOR_MAX_DIM {
            if let Some(lu) = Lu::factor(self) {
                let det = lu.determinant();
                // Keep well clear of the singular threshold so the scaled inverse
                // is accurate; near-singular inputs take the cofactor route.
                if det.abs() > 1e6 * self.singular_threshold() {
                    let mut adj = SquareMatrix::zeros(n);
                    let mut e = vec![0.0; n];
                    for j in 0..n {
                        e.iter_mut().for_each(|v| *v = 0.0);
                        e[j] = 1.0;
                        let col = lu.solve(&e);
                        for i in 0..n {
                            adj[(i, j)] = det * col[i];
                        }
                    }
                    return adj;
                }
            }
        }
        let mut adj = SquareMatrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                adj[(i, j)] = cofactor_sign(i, j) * self.minor_determinant(j, i);
            }
        }
        adj
    }

    /// `e_1^T adj(A)`. Only minors of `A` with its first column removed are
    /// formed, so the result does not depend on the first column at all.
    pub fn first_row_of_adjugate(&self) -> Vector {
        let n = self.n;
        if n == 1 {
            return Vector::from(vec![1.0]);
        }
        (0..n)
            .map(|j| cofactor_sign(0, j) * self.minor_determinant(j, 0))
            .collect::<Vec<_>>()
            .into()
    }

    /// Determinant of the matrix with `row` and `col` removed.
    pub fn minor_determinant(&self, row: usize, col: usize) -> f64 {
        let m = self.n - 1;
        let mut sub = Vec::with_capacity(m * m);
        for i in (0..self.n).filter(|&i| i != row) {
            for j in (0..self.n).filter(|&j| j != col) {
                sub.push(self[(i, j)]);
            }
        }
        if m < COFACTOR_MAX_DIM {
            laplace_det(&sub, m)
        } else {
            SquareMatrix { n: m, data: sub }.determinant()
        }
    }

    /// Solves `A x = rhs`, refusing matrices below the singularity threshold.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vector, LinalgError> {
        if rhs.len() != self.n {
            return Err(LinalgError::DimensionMismatch {
                expected: self.n,
                found: rhs.len(),
            });
        }
        let threshold = self.singular_threshold();
        let lu = Lu::factor(self).ok_or(LinalgError::SingularMatrix {
            det: 0.0,
            threshold,
        })?;
        let det = lu.determinant();
        if det.abs() <= threshold {
            return Err(LinalgError::SingularMatrix { det, threshold });
        }
        let mut x = lu.solve(rhs);
        // One step of iterative refinement.
        let r: Vec<f64> = self
            .mul_vec(&x)
            .iter()
            .zip(rhs)
            .map(|(ax, b)| b - ax)
            .collect();
        let dx = lu.solve(&r);
        x.iter_mut().zip(&dx).for_each(|(xi, d)| *xi += d);
        Ok(x.into())
    }
}

impl Index<(usize, usize)> for SquareMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.n + j]
    }
}

impl IndexMut<(usize, usize)> for SquareMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.n + j]
    }
}

impl fmt::Debug for SquareMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.data.chunks(self.n)).finish()
    }
}

impl TryFrom<Vec<Vec<f64>>> for SquareMatrix {
    type Error = LinalgError;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self, Self::Error> {
        SquareMatrix::from_rows(&rows)
    }
}

impl From<SquareMatrix> for Vec<Vec<f64>> {
    fn from(m: SquareMatrix) -> Self {
        m.rows()
    }
}

fn cofactor_sign(i: usize, j: usize) -> f64 {
    if (i + j).is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

/// Laplace expansion along the first row; only used for `n <= 3`.
fn laplace_det(a: &[f64], n: usize) -> f64 {
    match n {
        0 => 1.0,
        1 => a[0],
        2 => a[0] * a[3] - a[1] * a[2],
        3 => {
            a[0] * (a[4] * a[8] - a[5] * a[7]) - a[1] * (a[3] * a[8] - a[5] * a[6])
                + a[2] * (a[3] * a[7] - a[4] * a[6])
        }
        _ => {
            let m = n - 1;
            let mut total = 0.0;
            let mut sub = vec![0.0; m * m];
            for c in 0..n {
                let mut k = 0;
                for i in 1..n {
                    for j in (0..n).filter(|&j| j != c) {
                        sub[k] = a[i * n + j];
                        k += 1;
                    }
                }
                total += cofactor_sign(0, c) * a[c] * laplace_det(&sub, m);
            }
            total
        }
    }
}

/// LU factorization with partial pivoting, `P A = L U`.
struct Lu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
    sign: f64,
}

impl Lu {
    /// Returns `None` when an exact zero pivot is met.
    fn factor(a: &SquareMatrix) -> Option<Lu> {
        let n = a.n;
        let mut lu = a.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign = 1.0;
        for k in 0..n {
            let (p, pmax) =
                (k..n)
                    .map(|i| (i, lu[i * n + k].abs()))
                    .fold(
                        (k, -1.0),
                        |best, cur| if cur.1 > best.1 { cur } else { best },
                    );
            if pmax == 0.0 {
                return None;
            }
            if p != k {
                for j in 0..n {
                    lu.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
                sign = -sign;
            }
            let pivot = lu[k * n + k];
            for i in k + 1..n {
                let factor = lu[i * n + k] / pivot;
                lu[i * n + k] = factor;
                for j in k + 1..n {
                    lu[i * n + j] -= factor * lu[k * n + j];
                }
            }
        }
        Some(Lu { n, lu, perm, sign })
    }

    fn determinant(&self) -> f64 {
        (0..self.n).fold(self.sign, |d, i| d * self.lu[i * self.n + i])
    }

    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| rhs[p]).collect();
        for i in 0..n {
            for j in 0..i {
                x[i] -= self.lu[i * n + j] * x[j];
            }
        }
        for i in (0..n).rev() {
            for j in i + 1..n {
                x[i] -= self.lu[i * n + j] * x[j];
            }
            x[i] /= self.lu[i * n + i];
        }
        x
    }
}
