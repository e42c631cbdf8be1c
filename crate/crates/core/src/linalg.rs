//! Small dense linear algebra over [`Scalar`].
//!
//! Everything here is row-major and sized for GNN weight matrices and
//! kernel Gram matrices of a few hundred rows at most.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ProbeError, Result};
use crate::scalar::{norm2, Scalar};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
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

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(ProbeError::DimensionMismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(ProbeError::DimensionMismatch(format!(
                    "row {i} has {} entries, expected {cols}",
                    r.len()
                )));
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

    /// Uniform entries in `[-1/sqrt(cols), 1/sqrt(cols)]`, i.e. fan-in scaled.
    pub fn uniform_fan_in<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (cols.max(1) as f64).sqrt();
        Self::from_fn(rows, cols, |_, _| T::lit(rng.gen_range(-bound..=bound)))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn scale(&self, c: T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| x * c).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// `y = A x`
    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|i| crate::scalar::dot(self.row(i), x))
            .collect()
    }

    /// `y += A x`
    pub fn matvec_acc(&self, x: &[T], y: &mut [T]) {
        debug_assert_eq!(x.len(), self.cols);
        for (i, yi) in y.iter_mut().enumerate() {
            *yi += crate::scalar::dot(self.row(i), x);
        }
    }

    /// `y += Aᵀ x`
    pub fn matvec_t_acc(&self, x: &[T], y: &mut [T]) {
        debug_assert_eq!(x.len(), self.rows);
        for (i, &xi) in x.iter().enumerate() {
            if xi == T::zero() {
                continue;
            }
            for (yj, &a) in y.iter_mut().zip(self.row(i)) {
                *yj += a * xi;
            }
        }
    }

    pub fn matvec_t(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.cols];
        self.matvec_t_acc(x, &mut y);
        y
    }

    /// `A += a bᵀ`
    pub fn add_outer(&mut self, a: &[T], b: &[T]) {
        for (i, &ai) in a.iter().enumerate() {
            if ai == T::zero() {
                continue;
            }
            for (x, &bj) in self.row_mut(i).iter_mut().zip(b) {
                *x += ai * bj;
            }
        }
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows);
        let mut out = Self::zeros(self.rows, other.cols);
        for (i, out_row) in out.data.chunks_exact_mut(other.cols.max(1)).enumerate().take(self.rows) {
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn trace(&self) -> T {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn frobenius_norm(&self) -> T {
        norm2(&self.data)
    }

    /// Frobenius inner product `Σ_ij A_ij B_ij`.
    pub fn frobenius_dot(&self, other: &Self) -> T {
        crate::scalar::dot(&self.data, &other.data)
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    /// Induced matrix p-norm for p ∈ {1, 2, ∞}.
    pub fn operator_norm(&self, p: f64) -> Result<T> {
        if p == 2.0 {
            Ok(spectral_norm(self).value)
        } else if p == 1.0 {
            Ok((0..self.cols)
                .map(|j| (0..self.rows).map(|i| self[(i, j)].abs()).sum::<T>())
                .fold(T::zero(), T::max))
        } else if p.is_infinite() {
            Ok((0..self.rows)
                .map(|i| self.row(i).iter().map(|x| x.abs()).sum::<T>())
                .fold(T::zero(), T::max))
        } else {
            Err(ProbeError::InvalidParameter(format!(
                "matrix p-norm only available for p in {{1, 2, inf}}, got {p}"
            )))
        }
    }

    /// Converts element type through `f64`.
    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| U::lit(x.to_f64_lossy())).collect(),
        }
    }
}

impl<T> std::ops::Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Matrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralNorm<T> {
    pub value: T,
    pub iterations: usize,
    pub converged: bool,
}

pub const POWER_ITERATION_TOL: f64 = 1e-13;
pub const POWER_ITERATION_MAX: usize = 10_000;

/// Largest singular value by power iteration on `AᵀA`.
///
/// Starts from the normalized all-ones vector. Stops when the relative change
/// of the estimate drops below `1e-13`. On non-convergence the best estimate is
/// returned with `converged = false`.
pub fn spectral_norm<T: Scalar>(a: &Matrix<T>) -> SpectralNorm<T> {
    let n = a.cols();
    if n == 0 || a.rows() == 0 || a.max_abs() == T::zero() {
        return SpectralNorm {
            value: T::zero(),
            iterations: 0,
            converged: true,
        };
    }
    let tol = T::lit(POWER_ITERATION_TOL).max(T::epsilon() * T::lit(16.0));
    let ones = vec![T::one() / T::from_usize_lossy(n).sqrt(); n];
    // The all-ones start can be exactly orthogonal to the top singular vector;
    // a second deterministic alternating-sign start covers that case and the
    // larger of the two (both lower bounds) is kept.
    let mut alt: Vec<T> = (0..n)
        .map(|i| {
            let s = T::lit(1.0 + i as f64 / n as f64);
            if i % 2 == 0 {
                s
            } else {
                -s
            }
        })
        .collect();
    let na = norm2(&alt);
    alt.iter_mut().for_each(|x| *x /= na);
    let first = power_iterate(a, ones, tol);
    let second = power_iterate(a, alt, tol);
    SpectralNorm {
        value: first.value.max(second.value),
        iterations: first.iterations + second.iterations,
        converged: first.converged && second.converged,
    }
}

fn power_iterate<T: Scalar>(a: &Matrix<T>, mut v: Vec<T>, tol: T) -> SpectralNorm<T> {
    let mut sigma = T::zero();
    let mut prev = T::zero();
    for it in 1..=POWER_ITERATION_MAX {
        let av = a.matvec(&v);
        let mut w = a.matvec_t(&av);
        let nw = norm2(&w);
        if nw == T::zero() {
            return SpectralNorm {
                value: sigma,
                iterations: it,
                converged: true,
            };
        }
        w.iter_mut().for_each(|x| *x /= nw);
        v = w;
        // ‖A v‖ for unit v is a lower bound converging to σ_max.
        sigma = sigma.max(norm2(&a.matvec(&v)));
        if (sigma - prev).abs() <= tol * sigma {
            return SpectralNorm {
                value: sigma,
                iterations: it,
                converged: true,
            };
        }
        prev = sigma;
    }
    SpectralNorm {
        value: sigma,
        iterations: POWER_ITERATION_MAX,
        converged: false,
    }
}

/// Residual tolerance `‖A A⁻¹ − I‖_max` for an accepted inversion.
pub const INVERSE_RESIDUAL_TOL: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct Inverse<T> {
    pub matrix: Matrix<T>,
    /// `‖A A⁻¹ − I‖_max`
    pub residual: T,
    /// `‖A‖_∞ ‖A⁻¹‖_∞`
    pub condition_estimate: T,
}

/// Gauss-Jordan inversion with partial pivoting and the residual check.
///
/// Returns [`ProbeError::Singular`] when a pivot vanishes relative to the
/// matrix scale and [`ProbeError::IllConditioned`] when the residual check
/// fails.
pub fn invert<T: Scalar>(a: &Matrix<T>) -> Result<Inverse<T>> {
    let inv = invert_unchecked(a)?;
    if !(inv.residual <= T::lit(INVERSE_RESIDUAL_TOL)) {
        return Err(ProbeError::IllConditioned(inv.residual.to_f64_lossy()));
    }
    Ok(inv)
}

/// Like [`invert`] but leaves judging the residual to the caller. Unless the
/// residual is already far below tolerance, one step of iterative refinement
/// is kept when it lowers it.
pub fn invert_unchecked<T: Scalar>(a: &Matrix<T>) -> Result<Inverse<T>> {
    let n = a.rows();
    if n != a.cols() {
        return Err(ProbeError::DimensionMismatch(format!(
            "cannot invert a {}x{} matrix",
            a.rows(),
            a.cols()
        )));
    }
    let scale = a.max_abs();
    if scale == T::zero() {
        return Err(ProbeError::Singular);
    }
    let eps = T::epsilon() * T::from_usize_lossy(n) * scale;
    // Augmented rows [A | I]; columns left of the pivot are never read again.
    let w = 2 * n;
    let mut aug = vec![T::zero(); n * w];
    for i in 0..n {
        aug[i * w..i * w + n].copy_from_slice(a.row(i));
        aug[i * w + n + i] = T::one();
    }
    let mut pivot_buf = vec![T::zero(); w];
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&i, &j| {
                aug[i * w + col]
                    .abs()
                    .partial_cmp(&aug[j * w + col].abs())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .unwrap_or(col);
        let pivot = aug[pivot_row * w + col];
        if pivot.abs() <= eps || !pivot.is_finite() {
            return Err(ProbeError::Singular);
        }
        if pivot_row != col {
            for j in 0..w {
                aug.swap(pivot_row * w + j, col * w + j);
            }
        }
        let inv_pivot = T::one() / pivot;
        for x in &mut aug[col * w + col..(col + 1) * w] {
            *x *= inv_pivot;
        }
        pivot_buf[col..].copy_from_slice(&aug[col * w + col..(col + 1) * w]);
        for (i, row) in aug.chunks_exact_mut(w).enumerate() {
            if i == col {
                continue;
            }
            let factor = row[col];
            if factor == T::zero() {
                continue;
            }
            for (x, &p) in row[col..].iter_mut().zip(&pivot_buf[col..]) {
                *x -= factor * p;
            }
        }
    }
    let mut inv = Matrix::zeros(n, n);
    for i in 0..n {
        inv.row_mut(i).copy_from_slice(&aug[i * w + n..(i + 1) * w]);
    }
    let eye = Matrix::identity(n);
    let ax = a.matmul(&inv);
    let mut residual = ax.max_abs_diff(&eye);
    if residual <= T::lit(INVERSE_RESIDUAL_TOL * 1e-3) {
        let condition_estimate = a.operator_norm(f64::INFINITY)? * inv.operator_norm(f64::INFINITY)?;
        return Ok(Inverse {
            matrix: inv,
            residual,
            condition_estimate,
        });
    }
    // X + X (I - A X)
    let mut defect = eye.clone();
    for (d, v) in defect.as_mut_slice().iter_mut().zip(ax.as_slice()) {
        *d -= *v;
    }
    let mut refined = inv.matmul(&defect);
    for (r, v) in refined.as_mut_slice().iter_mut().zip(inv.as_slice()) {
        *r += *v;
    }
    let refined_residual = a.matmul(&refined).max_abs_diff(&eye);
    if refined_residual < residual {
        inv = refined;
        residual = refined_residual;
    }
    let condition_estimate = a.operator_norm(f64::INFINITY)? * inv.operator_norm(f64::INFINITY)?;
    Ok(Inverse {
        matrix: inv,
        residual,
        condition_estimate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spectral_norm_of_identity_is_one() {
        let s = spectral_norm(&Matrix::<f64>::identity(3));
        assert!((s.value - 1.0).abs() < 1e-12);
        assert!(s.converged);
    }

    #[test]
    fn spectral_norm_of_diagonal() {
        let m = Matrix::from_rows(&[vec![3.0f64, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!((spectral_norm(&m).value - 3.0).abs() < 1e-9);
    }

    #[test]
    fn spectral_norm_recovers_from_orthogonal_start() {
        // The top singular vector (1,-1)/√2 is orthogonal to the all-ones start.
        let m = Matrix::from_rows(&[vec![2.0f64, -2.0], vec![0.5, 0.5]]).unwrap();
        let expected = 8.0f64.sqrt();
        assert!((spectral_norm(&m).value - expected).abs() < 1e-9);
    }

    #[test]
    fn zero_matrix_has_zero_norm() {
        assert_eq!(spectral_norm(&Matrix::<f64>::zeros(2, 3)).value, 0.0);
    }

    #[test]
    fn inverse_of_2x2() {
        let a = Matrix::from_rows(&[vec![4.0f64, 7.0], vec![2.0, 6.0]]).unwrap();
        let inv = invert(&a).unwrap();
        let expected = Matrix::from_rows(&[vec![0.6, -0.7], vec![-0.2, 0.4]]).unwrap();
        assert!(inv.matrix.max_abs_diff(&expected) < 1e-14);
        assert!(inv.residual < 1e-14);
    }

    #[test]
    fn inverse_needs_row_swaps() {
        // zero leading pivot and a reversed pivot order
        let a = Matrix::from_rows(&[vec![0.0f64, 1.0, 2.0], vec![1.0, 0.0, 3.0], vec![4.0, -3.0, 8.0]]).unwrap();
        let inv = invert(&a).unwrap();
        assert!(a.matmul(&inv.matrix).max_abs_diff(&Matrix::identity(3)) < 1e-14);
        assert!(inv.matrix.matmul(&a).max_abs_diff(&Matrix::identity(3)) < 1e-14);
    }

    #[test]
    fn rank_one_is_singular() {
        let a = Matrix::from_fn(3, 3, |_, _| 1.0f64);
        assert!(matches!(invert(&a), Err(ProbeError::Singular)));
    }

    #[test]
    fn operator_norms_one_and_inf() {
        let a = Matrix::from_rows(&[vec![1.0f64, -2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(a.operator_norm(1.0).unwrap(), 6.0);
        assert_eq!(a.operator_norm(f64::INFINITY).unwrap(), 7.0);
        assert!(a.operator_norm(3.0).is_err());
    }
}
