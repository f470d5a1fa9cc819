use std::ops::{Index, IndexMut, Range};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
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

    pub fn from_row_slice(rows: usize, cols: usize, data: &[T]) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Self {
            rows,
            cols,
            data: data.to_vec(),
        })
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
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

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        if self.cols != rhs.rows {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                got: rhs.rows,
            });
        }
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                for j in 0..rhs.cols {
                    out[(i, j)] = out[(i, j)] + a * rhs[(k, j)];
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[T]) -> Result<Vec<T>> {
        if v.len() != self.cols {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                got: v.len(),
            });
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    pub fn scale(&self, c: T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| x * c).collect(),
        }
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().map(|&x| x * x).sum::<T>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
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

#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Square symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix<T>(Matrix<T>);

impl<T: Real> SymMatrix<T> {
    /// Validates squareness and symmetry (to 1e-12 relative to the largest
    /// entry, or a few ulps for single precision).
    pub fn new(m: Matrix<T>) -> Result<Self> {
        if m.rows != m.cols || m.rows == 0 {
            return Err(Error::DimensionMismatch {
                expected: m.rows.max(1),
                got: m.cols,
            });
        }
        let tol = T::lit(1e-12).max(T::epsilon() * T::lit(8.0)) * m.max_abs();
        for i in 0..m.rows {
            for j in 0..i {
                if (m[(i, j)] - m[(j, i)]).abs() > tol {
                    return Err(Error::InvalidData(format!(
                        "matrix not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self(m))
    }

    /// Replaces `m` by `(m + mᵀ)/2`.
    pub fn symmetrize(m: &Matrix<T>) -> Result<Self> {
        if m.rows != m.cols || m.rows == 0 {
            return Err(Error::DimensionMismatch {
                expected: m.rows.max(1),
                got: m.cols,
            });
        }
        let half = T::lit(0.5);
        Ok(Self(Matrix::from_fn(m.rows, m.cols, |i, j| {
            half * (m[(i, j)] + m[(j, i)])
        })))
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> T) -> Result<Self> {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = f(i, j);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        Self::new(m)
    }

    pub fn identity(n: usize) -> Self {
        Self(Matrix::identity(n))
    }

    pub fn dim(&self) -> usize {
        self.0.rows
    }

    pub fn as_matrix(&self) -> &Matrix<T> {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix<T> {
        self.0
    }

    pub fn diagonal(&self) -> Vec<T> {
        (0..self.dim()).map(|i| self.0[(i, i)]).collect()
    }

    /// `cᵀ M c`.
    pub fn quadratic_form(&self, c: &[T]) -> Result<T> {
        let mc = self.0.matvec(c)?;
        Ok(dot(c, &mc))
    }

    /// Principal sub-block over `range`.
    pub fn block(&self, range: Range<usize>) -> Result<Self> {
        if range.end > self.dim() || range.is_empty() {
            return Err(Error::IndexOutOfRange {
                index: range.end,
                len: self.dim(),
            });
        }
        let off = range.start;
        let n = range.len();
        Ok(Self(Matrix::from_fn(n, n, |i, j| self.0[(off + i, off + j)])))
    }

    pub fn scale(&self, c: T) -> Self {
        Self(self.0.scale(c))
    }

    pub fn inverse(&self) -> Result<Self> {
        let inv = solve_sym(self, &Matrix::identity(self.dim()))?;
        Self::symmetrize(&inv)
    }
}

impl<T> Index<(usize, usize)> for SymMatrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, idx: (usize, usize)) -> &T {
        &self.0[idx]
    }
}

/// Lower-triangular Cholesky factor `L` with `L·Lᵀ = m`.
pub fn cholesky<T: Real>(m: &SymMatrix<T>) -> Result<Matrix<T>> {
    let n = m.dim();
    let a = m.as_matrix();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d = d - l[(j, k)] * l[(j, k)];
        }
        if !(d > T::zero()) {
            return Err(Error::NotPositiveDefinite {
                pivot: j,
                value: d.to_f64_lossy(),
            });
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s = s - l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// Solves `m · X = rhs` by LU factorisation with partial pivoting, so that
/// indefinite (e.g. negative definite Hessian) systems are handled too.
pub fn solve_sym<T: Real>(m: &SymMatrix<T>, rhs: &Matrix<T>) -> Result<Matrix<T>> {
    let n = m.dim();
    if rhs.nrows() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: rhs.nrows(),
        });
    }
    let mut a = m.as_matrix().clone();
    let mut b = rhs.clone();
    let tiny = T::epsilon() * T::from_usize_lossy(n) * a.max_abs();
    if !a.is_finite() || a.max_abs() == T::zero() {
        return Err(Error::SingularMatrix);
    }

    for col in 0..n {
        let (piv, pmax) = (col..n)
            .map(|r| (r, a[(r, col)].abs()))
            .fold((col, T::zero()), |best, cur| if cur.1 > best.1 { cur } else { best });
        if pmax <= tiny {
            return Err(Error::SingularMatrix);
        }
        if piv != col {
            swap_rows(&mut a, piv, col);
            swap_rows(&mut b, piv, col);
        }
        let p = a[(col, col)];
        for r in col + 1..n {
            let f = a[(r, col)] / p;
            if f == T::zero() {
                continue;
            }
            for c in col..n {
                a[(r, c)] = a[(r, c)] - f * a[(col, c)];
            }
            for c in 0..b.ncols() {
                b[(r, c)] = b[(r, c)] - f * b[(col, c)];
            }
        }
    }
    for c in 0..b.ncols() {
        for r in (0..n).rev() {
            let mut s = b[(r, c)];
            for k in r + 1..n {
                s = s - a[(r, k)] * b[(k, c)];
            }
            b[(r, c)] = s / a[(r, r)];
        }
    }
    Ok(b)
}

fn swap_rows<T: Real>(m: &mut Matrix<T>, a: usize, b: usize) {
    for c in 0..m.ncols() {
        m.data.swap(a * m.cols + c, b * m.cols + c);
    }
}

/// Numerical column rank by Householder QR with column pivoting; a column
/// counts while its remaining norm exceeds `1e-10·‖m‖_F`.
pub fn column_rank<T: Real>(m: &Matrix<T>) -> usize {
    let (rows, cols) = (m.nrows(), m.ncols());
    let mut a = m.clone();
    let tol = T::lit(1e-10).max(T::epsilon() * T::lit(16.0)) * m.frobenius_norm();
    let mut norms: Vec<T> = (0..cols)
        .map(|j| (0..rows).map(|i| a[(i, j)] * a[(i, j)]).sum::<T>())
        .collect();
    let mut perm: Vec<usize> = (0..cols).collect();
    let mut rank = 0;

    for k in 0..cols.min(rows) {
        // recompute remaining norms exactly; dimensions here are small
        for j in k..cols {
            let pj = perm[j];
            norms[pj] = (k..rows).map(|i| a[(i, pj)] * a[(i, pj)]).sum::<T>();
        }
        let (best, best_norm) = (k..cols)
            .map(|j| (j, norms[perm[j]]))
            .fold((k, T::neg_infinity()), |b, c| if c.1 > b.1 { c } else { b });
        if best_norm.sqrt() <= tol {
            break;
        }
        perm.swap(k, best);
        let pk = perm[k];

        let alpha = -best_norm.sqrt() * a[(k, pk)].signum();
        let mut v: Vec<T> = (k..rows).map(|i| a[(i, pk)]).collect();
        v[0] = v[0] - alpha;
        let vnorm2: T = v.iter().map(|&x| x * x).sum();
        rank += 1;
        if vnorm2 == T::zero() {
            continue;
        }
        for &pj in perm.iter().skip(k) {
            let s: T = v
                .iter()
                .enumerate()
                .map(|(t, &vi)| vi * a[(k + t, pj)])
                .sum();
            let f = T::lit(2.0) * s / vnorm2;
            for (t, &vi) in v.iter().enumerate() {
                a[(k + t, pj)] = a[(k + t, pj)] - f * vi;
            }
        }
    }
    rank
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sym(rows: &[&[f64]]) -> SymMatrix<f64> {
        SymMatrix::new(Matrix::from_rows(rows).unwrap()).unwrap()
    }

    fn exchangeable(rho: f64, n: usize) -> SymMatrix<f64> {
        SymMatrix::from_fn(n, |i, j| if i == j { 1.0 } else { rho }).unwrap()
    }

    #[test]
    fn cholesky_identity() {
        let l = cholesky(&SymMatrix::<f64>::identity(3)).unwrap();
        assert_eq!(l, Matrix::identity(3));
    }

    #[test]
    fn cholesky_two_by_two() {
        let l = cholesky(&sym(&[&[4.0, 2.0], &[2.0, 5.0]])).unwrap();
        assert_eq!(l, Matrix::from_rows(&[[2.0, 0.0], [1.0, 2.0]]).unwrap());
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let err = cholesky(&exchangeable(-0.9, 3)).unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite { .. }));
    }

    #[test]
    fn rejects_asymmetric() {
        let m = Matrix::from_rows(&[[1.0, 2.0], [2.1, 1.0]]).unwrap();
        assert!(SymMatrix::new(m).is_err());
    }

    #[test]
    fn solve_identity_and_diagonal() {
        let rhs = Matrix::from_rows(&[[1.5, -2.0], [3.0, 0.25], [7.0, 1.0]]).unwrap();
        let x = solve_sym(&SymMatrix::identity(3), &rhs).unwrap();
        assert_eq!(x, rhs);
        let d = sym(&[&[2.0, 0.0], &[0.0, 4.0]]);
        let x = solve_sym(&d, &Matrix::from_rows(&[[2.0], [4.0]]).unwrap()).unwrap();
        assert_eq!(x.as_slice(), &[1.0, 1.0]);
    }

    #[test]
    fn solve_random_spd_residual() {
        // Fixed pseudo-random 5×5 SPD matrix: AᵀA + I.
        let a = Matrix::from_fn(5, 5, |i, j| (((i * 31 + j * 17) % 11) as f64 - 5.0) / 3.0);
        let spd = a.transpose().matmul(&a).unwrap();
        let spd = SymMatrix::symmetrize(&Matrix::from_fn(5, 5, |i, j| {
            spd[(i, j)] + if i == j { 1.0 } else { 0.0 }
        }))
        .unwrap();
        let rhs = Matrix::from_fn(5, 2, |i, j| (i as f64 + 1.0) * if j == 0 { 1.0 } else { -0.5 });
        let x = solve_sym(&spd, &rhs).unwrap();
        let r = spd.as_matrix().matmul(&x).unwrap();
        let num: f64 = r
            .as_slice()
            .iter()
            .zip(rhs.as_slice())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(num / rhs.frobenius_norm() < 1e-8);
    }

    #[test]
    fn solve_indefinite() {
        let m = sym(&[&[-2.0, 1.0], &[1.0, -3.0]]);
        let x = solve_sym(&m, &Matrix::from_rows(&[[1.0], [2.0]]).unwrap()).unwrap();
        assert!((-2.0 * x[(0, 0)] + x[(1, 0)] - 1.0).abs() < 1e-14);
        assert!((x[(0, 0)] - 3.0 * x[(1, 0)] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn solve_singular() {
        let m = sym(&[&[1.0, 2.0], &[2.0, 4.0]]);
        assert!(matches!(
            solve_sym(&m, &Matrix::identity(2)),
            Err(Error::SingularMatrix)
        ));
    }

    #[test]
    fn rank_detects_duplicate_column() {
        let m = Matrix::from_fn(20, 4, |i, j| match j {
            0 => 1.0,
            1 => i as f64,
            2 => ((i * i) % 7) as f64,
            _ => i as f64,
        });
        assert_eq!(column_rank(&m), 3);
        let full = Matrix::from_fn(20, 3, |i, j| match j {
            0 => 1.0,
            1 => i as f64,
            _ => ((i * i) % 7) as f64,
        });
        assert_eq!(column_rank(&full), 3);
        assert_eq!(column_rank(&Matrix::<f64>::zeros(4, 2)), 0);
    }

    #[test]
    fn quadratic_form_and_block() {
        let m = sym(&[&[2.0, 1.0, 0.0], &[1.0, 3.0, 1.0], &[0.0, 1.0, 4.0]]);
        assert_eq!(m.quadratic_form(&[1.0, 1.0, 0.0]).unwrap(), 7.0);
        let b = m.block(1..3).unwrap();
        assert_eq!(b.diagonal(), vec![3.0, 4.0]);
    }

    proptest! {
        #[test]
        fn cholesky_recovers_factor(
            diag in proptest::collection::vec(0.5f64..3.0, 4),
            off in proptest::collection::vec(-1.0f64..1.0, 6),
        ) {
            let mut l = Matrix::zeros(4, 4);
            let mut k = 0;
            for i in 0..4 {
                l[(i, i)] = diag[i];
                for j in 0..i {
                    l[(i, j)] = off[k];
                    k += 1;
                }
            }
            let llt = SymMatrix::symmetrize(&l.matmul(&l.transpose()).unwrap()).unwrap();
            let back = cholesky(&llt).unwrap();
            for i in 0..4 {
                for j in 0..4 {
                    prop_assert!((back[(i, j)] - l[(i, j)]).abs() <= 1e-9 * l.max_abs());
                }
            }
        }
    }
}
