//! Small dense and tridiagonal linear algebra.
//!
//! State spaces here are tiny (a handful to a few dozen components), so a
//! row-major dense matrix with partial-pivoting LU is all the general
//! machinery needed. The tridiagonal path exists because the implicit
//! diffusion step is applied tens of thousands of times per run.

use std::ops::{Index, IndexMut};

use crate::Scalar;

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from row vectors. Panics on ragged input.
    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        Self {
            rows: r,
            cols: c,
            data: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn from_diagonal(diag: &[T]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    pub fn scalar(value: T) -> Self {
        Self::from_diagonal(&[value])
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

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// `out = self * x`.
    pub fn mul_vec_into(&self, x: &[T], out: &mut [T]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (i, o) in out.iter_mut().enumerate() {
            *o = self
                .row(i)
                .iter()
                .zip(x)
                .fold(T::zero(), |acc, (&a, &b)| acc + a * b);
        }
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.rows];
        self.mul_vec_into(x, &mut out);
        out
    }

    /// `out += alpha * self * x`.
    pub fn mul_vec_acc(&self, alpha: T, x: &[T], out: &mut [T]) {
        for (i, o) in out.iter_mut().enumerate() {
            let dot = self
                .row(i)
                .iter()
                .zip(x)
                .fold(T::zero(), |acc, (&a, &b)| acc + a * b);
            *o += alpha * dot;
        }
    }

    pub fn matmul(&self, other: &Matrix<T>) -> Matrix<T> {
        assert_eq!(self.cols, other.rows, "dimension mismatch in matmul");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                let orow = other.row(k);
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, &b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Matrix<T> {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn scaled(&self, s: T) -> Matrix<T> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| v * s).collect(),
        }
    }

    /// `self += s * other`.
    pub fn add_scaled(&mut self, s: T, other: &Matrix<T>) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    /// Induced L1 norm (max absolute column sum).
    pub fn norm_l1(&self) -> T {
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self[(i, j)].abs()).sum::<T>())
            .fold(T::zero(), T::max)
    }

    /// L1 logarithmic norm: max over columns of `a_jj + sum_{i != j} |a_ij|`.
    pub fn log_norm_l1(&self) -> T {
        assert!(self.is_square());
        (0..self.cols)
            .map(|j| {
                let off: T = (0..self.rows)
                    .filter(|&i| i != j)
                    .map(|i| self[(i, j)].abs())
                    .sum();
                self[(j, j)] + off
            })
            .fold(T::neg_infinity(), T::max)
    }

    pub fn min_entry(&self) -> T {
        self.data.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn lu(&self) -> Option<Lu<T>> {
        Lu::factor(self)
    }

    pub fn inverse(&self) -> Option<Matrix<T>> {
        let lu = self.lu()?;
        let n = self.rows;
        let mut inv = Matrix::zeros(n, n);
        let mut col = vec![T::zero(); n];
        for j in 0..n {
            col.iter_mut().for_each(|c| *c = T::zero());
            col[j] = T::one();
            lu.solve_in_place(&mut col);
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        Some(inv)
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

/// LU factorization with partial pivoting, `P A = L U`.
#[derive(Clone, Debug)]
pub struct Lu<T> {
    lu: Matrix<T>,
    perm: Vec<usize>,
}

impl<T: Scalar> Lu<T> {
    pub fn factor(a: &Matrix<T>) -> Option<Self> {
        assert!(a.is_square(), "LU of a non-square matrix");
        let n = a.rows;
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = a.max_abs().max(T::min_positive_value());
        for k in 0..n {
            let (p, pivot) =
                (k..n)
                    .map(|i| (i, lu[(i, k)].abs()))
                    .fold(
                        (k, T::zero()),
                        |best, cur| if cur.1 > best.1 { cur } else { best },
                    );
            if !(pivot > T::epsilon() * scale * T::from_count(n)) {
                return None;
            }
            if p != k {
                for j in 0..n {
                    let tmp = lu[(k, j)];
                    lu[(k, j)] = lu[(p, j)];
                    lu[(p, j)] = tmp;
                }
                perm.swap(k, p);
            }
            let d = lu[(k, k)];
            for i in k + 1..n {
                let l = lu[(i, k)] / d;
                lu[(i, k)] = l;
                if l != T::zero() {
                    for j in k + 1..n {
                        let u = lu[(k, j)];
                        lu[(i, j)] -= l * u;
                    }
                }
            }
        }
        Some(Self { lu, perm })
    }

    pub fn solve_in_place(&self, b: &mut [T]) {
        let n = self.perm.len();
        let permuted: Vec<T> = self.perm.iter().map(|&p| b[p]).collect();
        b.copy_from_slice(&permuted);
        for i in 0..n {
            let mut s = b[i];
            for j in 0..i {
                s -= self.lu[(i, j)] * b[j];
            }
            b[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for j in i + 1..n {
                s -= self.lu[(i, j)] * b[j];
            }
            b[i] = s / self.lu[(i, i)];
        }
    }
}

/// Tridiagonal matrix stored by its three bands.
///
/// `lower[i]` couples row `i + 1` to column `i`, `upper[i]` couples row `i`
/// to column `i + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tridiagonal<T> {
    pub lower: Vec<T>,
    pub diag: Vec<T>,
    pub upper: Vec<T>,
}

impl<T: Scalar> Tridiagonal<T> {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn to_dense(&self) -> Matrix<T> {
        let n = self.len();
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = self.diag[i];
            if i + 1 < n {
                m[(i, i + 1)] = self.upper[i];
                m[(i + 1, i)] = self.lower[i];
            }
        }
        m
    }

    /// `I + s * self`.
    pub fn shifted_identity(&self, s: T) -> Tridiagonal<T> {
        Tridiagonal {
            lower: self.lower.iter().map(|&v| s * v).collect(),
            diag: self.diag.iter().map(|&v| T::one() + s * v).collect(),
            upper: self.upper.iter().map(|&v| s * v).collect(),
        }
    }

    pub fn mul_vec_into(&self, x: &[T], out: &mut [T]) {
        let n = self.len();
        for i in 0..n {
            let mut s = self.diag[i] * x[i];
            if i > 0 {
                s += self.lower[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                s += self.upper[i] * x[i + 1];
            }
            out[i] = s;
        }
    }

    /// Column-wise L1 logarithmic norm, as for [`Matrix::log_norm_l1`].
    pub fn log_norm_l1(&self) -> T {
        let n = self.len();
        (0..n)
            .map(|j| {
                let mut s = self.diag[j];
                if j > 0 {
                    s += self.upper[j - 1].abs();
                }
                if j + 1 < n {
                    s += self.lower[j].abs();
                }
                s
            })
            .fold(T::neg_infinity(), T::max)
    }

    /// True when the matrix is a column diagonally dominant Z-matrix with
    /// positive diagonal, which makes it a nonsingular M-matrix.
    pub fn is_m_matrix(&self) -> bool {
        let n = self.len();
        let offdiag_ok = self
            .lower
            .iter()
            .chain(&self.upper)
            .all(|&v| v <= T::zero());
        offdiag_ok
            && (0..n).all(|j| {
                let mut off = T::zero();
                if j > 0 {
                    off += self.upper[j - 1].abs();
                }
                if j + 1 < n {
                    off += self.lower[j].abs();
                }
                self.diag[j] > off
            })
    }

    pub fn factor(&self) -> Option<TridiagonalLu<T>> {
        TridiagonalLu::factor(self)
    }
}

/// Thomas-algorithm factorization (no pivoting).
///
/// On an M-matrix every update adds nonnegative quantities, so solving with
/// a nonnegative right-hand side gives an exactly nonnegative result in
/// floating point.
#[derive(Clone, Debug)]
pub struct TridiagonalLu<T> {
    lower: Vec<T>,
    /// Reciprocals of the eliminated pivots.
    inv_pivot: Vec<T>,
    /// Modified super-diagonal `c'_i = c_i / pivot_i`.
    upper_mod: Vec<T>,
}

impl<T: Scalar> TridiagonalLu<T> {
    pub fn factor(m: &Tridiagonal<T>) -> Option<Self> {
        let n = m.len();
        let mut inv_pivot = Vec::with_capacity(n);
        let mut upper_mod = Vec::with_capacity(n.saturating_sub(1));
        for i in 0..n {
            let mut pivot = m.diag[i];
            if i > 0 {
                pivot -= m.lower[i - 1] * upper_mod[i - 1];
            }
            if pivot == T::zero() || !pivot.is_finite() {
                return None;
            }
            let ip = T::one() / pivot;
            inv_pivot.push(ip);
            if i + 1 < n {
                upper_mod.push(m.upper[i] * ip);
            }
        }
        Some(Self {
            lower: m.lower.clone(),
            inv_pivot,
            upper_mod,
        })
    }

    pub fn solve_in_place(&self, x: &mut [T]) {
        let n = self.inv_pivot.len();
        if n == 0 {
            return;
        }
        x[0] *= self.inv_pivot[0];
        for i in 1..n {
            x[i] = (x[i] - self.lower[i - 1] * x[i - 1]) * self.inv_pivot[i];
        }
        for i in (0..n - 1).rev() {
            x[i] -= self.upper_mod[i] * x[i + 1];
        }
    }
}

/// A linear map on the state space that is either dense or diagonal.
///
/// Birth operators of the diffusion backend act by pointwise multiplication
/// and are kept diagonal.
#[derive(Clone, Debug, PartialEq)]
pub enum Operator<T> {
    Dense(Matrix<T>),
    Diagonal(Vec<T>),
}

impl<T: Scalar> Operator<T> {
    pub fn dim(&self) -> usize {
        match self {
            Operator::Dense(m) => m.rows(),
            Operator::Diagonal(d) => d.len(),
        }
    }

    /// `out = self * x`.
    pub fn apply_into(&self, x: &[T], out: &mut [T]) {
        match self {
            Operator::Dense(m) => m.mul_vec_into(x, out),
            Operator::Diagonal(d) => {
                for ((o, &di), &xi) in out.iter_mut().zip(d).zip(x) {
                    *o = di * xi;
                }
            }
        }
    }

    /// `out += alpha * self * x`.
    pub fn apply_acc(&self, alpha: T, x: &[T], out: &mut [T]) {
        match self {
            Operator::Dense(m) => m.mul_vec_acc(alpha, x, out),
            Operator::Diagonal(d) => {
                for ((o, &di), &xi) in out.iter_mut().zip(d).zip(x) {
                    *o += alpha * di * xi;
                }
            }
        }
    }

    /// `self * rhs` as a dense matrix.
    pub fn mul_matrix(&self, rhs: &Matrix<T>) -> Matrix<T> {
        match self {
            Operator::Dense(m) => m.matmul(rhs),
            Operator::Diagonal(d) => {
                Matrix::from_fn(rhs.rows(), rhs.cols(), |i, j| d[i] * rhs[(i, j)])
            }
        }
    }

    pub fn to_dense(&self) -> Matrix<T> {
        match self {
            Operator::Dense(m) => m.clone(),
            Operator::Diagonal(d) => Matrix::from_diagonal(d),
        }
    }

    pub fn norm_l1(&self) -> T {
        match self {
            Operator::Dense(m) => m.norm_l1(),
            Operator::Diagonal(d) => d.iter().fold(T::zero(), |m, &v| m.max(v.abs())),
        }
    }

    pub fn min_entry(&self) -> T {
        match self {
            Operator::Dense(m) => m.min_entry(),
            Operator::Diagonal(d) => {
                let m = d.iter().copied().fold(T::infinity(), T::min);
                if d.len() > 1 {
                    m.min(T::zero())
                } else {
                    m
                }
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Operator::Dense(m) => m.as_slice().iter().all(|&v| v == T::zero()),
            Operator::Diagonal(d) => d.iter().all(|&v| v == T::zero()),
        }
    }
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

pub fn norm_l1<T: Scalar>(a: &[T]) -> T {
    a.iter().fold(T::zero(), |acc, &x| acc + x.abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn inverse_of_small_matrix() {
        let a = Matrix::from_rows(&[vec![4.0, 1.0], vec![2.0, 3.0]]);
        let inv = a.inverse().unwrap();
        let id = a.matmul(&inv);
        for i in 0..2 {
            for j in 0..2 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert_relative_eq!(id[(i, j)], e, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn singular_matrix_has_no_lu() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]);
        assert!(a.lu().is_none());
    }

    #[test]
    fn pivoting_handles_zero_leading_entry() {
        let a = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        let inv = a.inverse().unwrap();
        assert_eq!(inv, a);
    }

    #[test]
    fn log_norm_of_diagonal_is_max_entry() {
        let a = Matrix::from_diagonal(&[-1.0, -3.0, 0.5]);
        assert_eq!(a.log_norm_l1(), 0.5);
    }

    #[test]
    fn thomas_matches_dense_solve() {
        let t = Tridiagonal {
            lower: vec![-1.0, -0.5, -2.0],
            diag: vec![3.0, 4.0, 5.0, 6.0],
            upper: vec![-0.25, -1.0, -1.5],
        };
        let rhs = vec![1.0, 0.0, 2.0, 0.5];
        let mut x = rhs.clone();
        t.factor().unwrap().solve_in_place(&mut x);
        let mut y = rhs.clone();
        t.to_dense().lu().unwrap().solve_in_place(&mut y);
        for (a, b) in x.iter().zip(&y) {
            assert_relative_eq!(a, b, epsilon = 1e-14);
        }
        let mut back = vec![0.0; 4];
        t.mul_vec_into(&x, &mut back);
        for (a, b) in back.iter().zip(&rhs) {
            assert_relative_eq!(a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn m_matrix_inverse_is_nonnegative() {
        let t = Tridiagonal {
            lower: vec![-1.0; 4],
            diag: vec![2.5; 5],
            upper: vec![-1.0; 4],
        };
        assert!(t.is_m_matrix());
        let lu = t.factor().unwrap();
        for k in 0..5 {
            let mut e = vec![0.0; 5];
            e[k] = 1.0;
            lu.solve_in_place(&mut e);
            assert!(e.iter().all(|&v| v >= 0.0));
        }
    }
}
