//! Small dense linear algebra: row-major matrices, LU with partial pivoting,
//! solves, inverses and the norms used throughout the crate.
//!
//! The matrix ∞-norm is always the maximum absolute row sum.

use std::fmt;

use crate::error::{check_len, Error, Result};

/// Relative pivot threshold below which a matrix is reported singular.
pub const PIVOT_TOLERANCE: f64 = 1e-14;

/// Row-major dense matrix.
#[derive(Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_len("matrix data", rows * cols, data.len())?;
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!(
                "non-finite matrix entry at ({}, {})",
                i / cols.max(1),
                i % cols.max(1)
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut out = Self::zeros(n, n);
        for i in 0..n {
            out.data[i * n + i] = 1.0;
        }
        out
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            check_len("matrix row", cols, row.len())?;
            data.extend_from_slice(row);
        }
        Self::new(rows.len(), cols, data)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.cols.max(1)).take(self.rows)
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("matvec operand", self.cols, x.len())?;
        Ok(self
            .iter_rows()
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect())
    }

    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        check_len("matmul inner dimension", self.cols, other.rows)?;
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                let src = other.row(k);
                for (dst, b) in out.row_mut(i).iter_mut().zip(src) {
                    *dst += a * b;
                }
            }
        }
        Ok(out)
    }

    /// Entrywise `self - other`.
    pub fn sub(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        check_len("matrix rows", self.rows, other.rows)?;
        check_len("matrix cols", self.cols, other.cols)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    /// Entrywise `self + other`.
    pub fn add(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        check_len("matrix rows", self.rows, other.rows)?;
        check_len("matrix cols", self.cols, other.cols)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn scale(&self, factor: f64) -> DenseMatrix {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    /// Maximum absolute row sum.
    pub fn inf_norm(&self) -> f64 {
        self.iter_rows()
            .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }
}

impl fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "DenseMatrix {}x{} [", self.rows, self.cols)?;
        for row in self.iter_rows() {
            writeln!(f, "  {row:?}")?;
        }
        write!(f, "]")
    }
}

/// Packed LU factors of a square matrix with the row permutation applied
/// during elimination: `P A = L U`, unit diagonal on `L`.
#[derive(Debug, Clone)]
pub struct LuFactorization {
    lu: DenseMatrix,
    perm: Vec<usize>,
}

impl LuFactorization {
    pub fn factor(a: &DenseMatrix) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::DimensionMismatch {
                what: "LU factorization (square matrix)",
                expected: a.rows(),
                actual: a.cols(),
            });
        }
        let n = a.rows();
        let threshold = PIVOT_TOLERANCE * a.max_abs().max(f64::MIN_POSITIVE);
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();

        for col in 0..n {
            let (pivot_row, pivot_abs) =
                (col..n)
                    .map(|r| (r, lu.get(r, col).abs()))
                    .fold(
                        (col, -1.0),
                        |best, cur| if cur.1 > best.1 { cur } else { best },
                    );
            if pivot_abs <= threshold {
                return Err(Error::Singular {
                    column: col,
                    pivot: lu.get(pivot_row, col),
                });
            }
            if pivot_row != col {
                for j in 0..n {
                    lu.data.swap(col * n + j, pivot_row * n + j);
                }
                perm.swap(col, pivot_row);
            }
            let pivot = lu.get(col, col);
            for r in col + 1..n {
                let factor = lu.get(r, col) / pivot;
                lu.set(r, col, factor);
                if factor == 0.0 {
                    continue;
                }
                for j in col + 1..n {
                    let v = lu.get(r, j) - factor * lu.get(col, j);
                    lu.set(r, j, v);
                }
            }
        }
        Ok(Self { lu, perm })
    }

    pub fn dim(&self) -> usize {
        self.lu.rows()
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.dim();
        check_len("LU right-hand side", n, b.len())?;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        // forward substitution, unit lower
        for i in 0..n {
            let row = self.lu.row(i);
            let s: f64 = row[..i].iter().zip(&x[..i]).map(|(l, v)| l * v).sum();
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let row = self.lu.row(i);
            let s: f64 = row[i + 1..]
                .iter()
                .zip(&x[i + 1..])
                .map(|(u, v)| u * v)
                .sum();
            x[i] = (x[i] - s) / row[i];
        }
        Ok(x)
    }
}

/// Solves `A x = b` by LU with partial pivoting.
pub fn lu_solve(a: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    LuFactorization::factor(a)?.solve(b)
}

/// Inverse via one factorization and `n` solves against identity columns.
pub fn inverse(a: &DenseMatrix) -> Result<DenseMatrix> {
    let lu = LuFactorization::factor(a)?;
    let n = lu.dim();
    let mut out = DenseMatrix::zeros(n, n);
    let mut e = vec![0.0; n];
    for j in 0..n {
        e.iter_mut().for_each(|v| *v = 0.0);
        e[j] = 1.0;
        let col = lu.solve(&e)?;
        for (i, v) in col.into_iter().enumerate() {
            out.set(i, j, v);
        }
    }
    Ok(out)
}

pub fn inf_norm(a: &DenseMatrix) -> f64 {
    a.inf_norm()
}

pub fn matvec(a: &DenseMatrix, x: &[f64]) -> Result<Vec<f64>> {
    a.matvec(x)
}

pub fn two_norm_vec(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn inf_norm_vec(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

/// `‖x − y‖∞`; panics on length mismatch.
pub fn inf_dist(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "inf_dist length mismatch");
    x.iter()
        .zip(y)
        .fold(0.0, |acc, (a, b)| acc.max((a - b).abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn diag_dominant(n: usize, rng: &mut SplitMix64) -> DenseMatrix {
        let mut a = DenseMatrix::zeros(n, n);
        for i in 0..n {
            let mut off = 0.0;
            for j in 0..n {
                if i != j {
                    let v = rng.next_f64() * 2.0 - 1.0;
                    off += v.abs();
                    a.set(i, j, v);
                }
            }
            let sign = if rng.next_f64() < 0.5 { -1.0 } else { 1.0 };
            a.set(i, i, sign * (off + 0.5 + rng.next_f64()));
        }
        a
    }

    #[test]
    fn identity_solve_returns_rhs() {
        let b = vec![3.0, -1.5, 2.25, 0.0];
        let x = lu_solve(&DenseMatrix::identity(4), &b).unwrap();
        assert_eq!(x, b);
    }

    #[test]
    fn scalar_jacobian_solve() {
        let a = DenseMatrix::new(1, 1, vec![-0.2]).unwrap();
        let x = lu_solve(&a, &[1.0]).unwrap();
        assert!((x[0] + 5.0).abs() < 1e-14);
        let inv = inverse(&a).unwrap();
        assert!((inf_norm(&inv) - 5.0).abs() < 1e-14);
    }

    #[test]
    fn random_diagonally_dominant_residuals() {
        let mut rng = SplitMix64::new(7);
        for _ in 0..100 {
            let a = diag_dominant(25, &mut rng);
            let b: Vec<f64> = (0..25).map(|_| rng.next_f64() * 10.0 - 5.0).collect();
            let x = lu_solve(&a, &b).unwrap();
            let ax = a.matvec(&x).unwrap();
            let res = inf_dist(&ax, &b);
            assert!(res <= 1e-10 * (1.0 + inf_norm_vec(&b)), "residual {res}");

            let inv = inverse(&a).unwrap();
            let prod = inv.matmul(&a).unwrap();
            let dev = prod.sub(&DenseMatrix::identity(25)).unwrap().max_abs();
            assert!(dev <= 1e-9, "inverse deviation {dev}");
        }
    }

    #[test]
    fn pivoting_handles_zero_leading_entry() {
        let a = DenseMatrix::from_rows(&[vec![0.0, 1.0], vec![2.0, 3.0]]).unwrap();
        let x = lu_solve(&a, &[1.0, 8.0]).unwrap();
        assert!((x[0] - 2.5).abs() < 1e-14 && (x[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn singular_matrix_is_reported() {
        let a = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap();
        assert!(matches!(
            lu_solve(&a, &[1.0, 1.0]),
            Err(Error::Singular { .. })
        ));
        assert!(matches!(
            inverse(&DenseMatrix::zeros(3, 3)),
            Err(Error::Singular { .. })
        ));
    }

    #[test]
    fn inverse_of_identity() {
        assert_eq!(
            inverse(&DenseMatrix::identity(6)).unwrap(),
            DenseMatrix::identity(6)
        );
    }

    #[test]
    fn shape_errors() {
        let a = DenseMatrix::zeros(2, 3);
        assert!(matches!(
            lu_solve(&a, &[1.0, 1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(DenseMatrix::new(2, 2, vec![1.0; 3]).is_err());
        assert!(DenseMatrix::new(1, 1, vec![f64::NAN]).is_err());
        assert!(DenseMatrix::identity(2).matvec(&[1.0]).is_err());
    }

    #[test]
    fn norms() {
        let a = DenseMatrix::from_rows(&[vec![1.0, -2.0], vec![-0.5, 0.25]]).unwrap();
        assert_eq!(a.inf_norm(), 3.0);
        assert_eq!(two_norm_vec(&[3.0, 4.0]), 5.0);
        assert_eq!(inf_norm_vec(&[3.0, -4.0]), 4.0);
    }
}
