//! Dense symmetric, tridiagonal, and banded linear algebra.
//!
//! The dimensions in this crate are small (covariances of a few parameters,
//! observation blocks up to a handful of sensors) except for the 2-D finite
//! difference systems, which are banded. Everything here is generic over the
//! scalar type; the test suite cross-checks factorizations against nalgebra.

use crate::error::{Error, Result};
use crate::scalar::{count_as, real, Scalar};

/// Dense symmetric matrix, full row-major storage.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMat<T> {
    n: usize,
    data: Vec<T>,
}

/// Relative symmetry tolerance on construction.
const SYMMETRY_TOL: f64 = 1e-12;

impl<T: Scalar> SymMat<T> {
    pub fn zeros(n: usize) -> Self {
        SymMat {
            n,
            data: vec![T::zero(); n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::scaled_identity(n, T::one())
    }

    pub fn scaled_identity(n: usize, c: T) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = c;
        }
        m
    }

    /// Builds from row data, requiring symmetry within a relative tolerance.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::invalid("symmetric matrix must be non-empty"));
        }
        let mut data = Vec::with_capacity(n * n);
        let mut max_abs = T::zero();
        for row in rows {
            if row.len() != n {
                return Err(Error::invalid(format!(
                    "matrix row has length {}, expected {n}",
                    row.len()
                )));
            }
            for &v in row {
                if !v.is_finite() {
                    return Err(Error::invalid("matrix entries must be finite"));
                }
                max_abs = max_abs.max(v.abs());
                data.push(v);
            }
        }
        let tol = real::<T>(SYMMETRY_TOL) * max_abs.max(T::one());
        for i in 0..n {
            for j in (i + 1)..n {
                let d = (data[i * n + j] - data[j * n + i]).abs();
                if d > tol {
                    return Err(Error::invalid(format!(
                        "matrix not symmetric: |a[{i}][{j}] - a[{j}][{i}]| = {d}"
                    )));
                }
            }
        }
        // Store the symmetrized average so downstream algebra sees an exactly
        // symmetric matrix.
        let mut m = SymMat { n, data };
        let half = real::<T>(0.5);
        for i in 0..n {
            for j in (i + 1)..n {
                let avg = (m.data[i * n + j] + m.data[j * n + i]) * half;
                m.data[i * n + j] = avg;
                m.data[j * n + i] = avg;
            }
        }
        Ok(m)
    }

    /// Diagonal matrix from variances.
    pub fn from_diagonal(diag: &[T]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n);
        for (i, &v) in diag.iter().enumerate() {
            m.data[i * n + i] = v;
        }
        m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.n + j]
    }

    /// Sets `a[i][j]` and `a[j][i]`.
    pub fn set_sym(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.n + j] = v;
        self.data[j * self.n + i] = v;
    }

    pub fn add_diagonal(&mut self, c: T) {
        for i in 0..self.n {
            self.data[i * self.n + i] += c;
        }
    }

    pub fn rows(&self) -> Vec<Vec<T>> {
        (0..self.n)
            .map(|i| self.data[i * self.n..(i + 1) * self.n].to_vec())
            .collect()
    }

    pub fn trace(&self) -> T {
        (0..self.n).map(|i| self.get(i, i)).fold(T::zero(), |a, b| a + b)
    }

    /// Cholesky factorization `A = L Lᵀ`. Fails unless positive definite.
    pub fn cholesky(&self) -> Result<Cholesky<T>> {
        let n = self.n;
        let mut l = vec![T::zero(); n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut s = self.get(i, j);
                for k in 0..j {
                    s = s - l[i * n + k] * l[j * n + k];
                }
                if i == j {
                    if s <= T::zero() || !s.is_finite() {
                        return Err(Error::SpdViolation(format!(
                            "nonpositive pivot {s} at index {i}"
                        )));
                    }
                    l[i * n + i] = s.sqrt();
                } else {
                    l[i * n + j] = s / l[j * n + j];
                }
            }
        }
        Ok(Cholesky { n, l })
    }

    /// True iff `A - c·I` admits a Cholesky factorization, i.e. the smallest
    /// eigenvalue exceeds `c`.
    pub fn min_eigenvalue_exceeds(&self, c: T) -> bool {
        let mut shifted = self.clone();
        shifted.add_diagonal(-c);
        shifted.cholesky().is_ok()
    }
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
#[derive(Clone, Debug)]
pub struct Cholesky<T> {
    n: usize,
    l: Vec<T>,
}

impl<T: Scalar> Cholesky<T> {
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    fn l(&self, i: usize, j: usize) -> T {
        self.l[i * self.n + j]
    }

    /// Solves `L y = b`.
    pub fn solve_lower(&self, b: &[T]) -> Vec<T> {
        let n = self.n;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s = s - self.l(i, k) * y[k];
            }
            y[i] = s / self.l(i, i);
        }
        y
    }

    /// Solves `A x = b` via the two triangular solves.
    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.n;
        let mut x = self.solve_lower(b);
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..n {
                s = s - self.l(k, i) * x[k];
            }
            x[i] = s / self.l(i, i);
        }
        x
    }

    /// Quadratic form `bᵀ A⁻¹ b = ‖L⁻¹ b‖²`.
    pub fn inv_quad_form(&self, b: &[T]) -> T {
        self.solve_lower(b)
            .into_iter()
            .map(|v| v * v)
            .fold(T::zero(), |a, x| a + x)
    }

    /// `log det A = 2 Σ log l_ii`.
    pub fn log_det(&self) -> T {
        let two = real::<T>(2.0);
        (0..self.n)
            .map(|i| self.l(i, i).ln())
            .fold(T::zero(), |a, x| a + x)
            * two
    }

    /// Computes `L z` (used to turn standard normals into correlated draws).
    pub fn lower_mul(&self, z: &[T]) -> Vec<T> {
        let n = self.n;
        (0..n)
            .map(|i| {
                let mut s = T::zero();
                for k in 0..=i {
                    s = s + self.l(i, k) * z[k];
                }
                s
            })
            .collect()
    }
}

/// Solves a tridiagonal system with the Thomas algorithm.
///
/// `lower` and `upper` have length `n - 1`; no pivoting, which is safe for
/// the diagonally dominant systems produced by the finite difference solvers.
pub fn solve_tridiagonal<T: Scalar>(
    lower: &[T],
    diag: &[T],
    upper: &[T],
    rhs: &[T],
) -> Result<Vec<T>> {
    let n = diag.len();
    if n == 0 || lower.len() != n - 1 || upper.len() != n - 1 || rhs.len() != n {
        return Err(Error::invalid("tridiagonal system dimensions disagree"));
    }
    let mut c = vec![T::zero(); n];
    let mut d = vec![T::zero(); n];
    let mut denom = diag[0];
    if denom == T::zero() || !denom.is_finite() {
        return Err(Error::SolverFailure("zero pivot in tridiagonal solve".into()));
    }
    c[0] = upper.first().copied().unwrap_or_else(T::zero) / denom;
    d[0] = rhs[0] / denom;
    for i in 1..n {
        denom = diag[i] - lower[i - 1] * c[i - 1];
        if denom == T::zero() || !denom.is_finite() {
            return Err(Error::SolverFailure("zero pivot in tridiagonal solve".into()));
        }
        if i < n - 1 {
            c[i] = upper[i] / denom;
        }
        d[i] = (rhs[i] - lower[i - 1] * d[i - 1]) / denom;
    }
    let mut x = vec![T::zero(); n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    Ok(x)
}

/// Symmetric positive definite banded matrix, lower band storage.
///
/// `band[i * (bw + 1) + k]` holds `A[i][i - bw + k]`, so the diagonal sits at
/// `k = bw`. Entries left of column 0 are padding.
pub struct BandedSpd<T> {
    n: usize,
    bw: usize,
    band: Vec<T>,
}

impl<T: Scalar> BandedSpd<T> {
    pub fn zeros(n: usize, bandwidth: usize) -> Self {
        BandedSpd {
            n,
            bw: bandwidth,
            band: vec![T::zero(); n * (bandwidth + 1)],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bw);
        i * (self.bw + 1) + (self.bw + j - i)
    }

    /// Adds `v` to `A[i][j]` (lower triangle only, `j ≤ i`).
    pub fn add(&mut self, i: usize, j: usize, v: T) {
        let at = self.idx(i, j);
        self.band[at] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        let (r, c) = if j > i { (j, i) } else { (i, j) };
        if r - c > self.bw {
            T::zero()
        } else {
            self.band[self.idx(r, c)]
        }
    }

    /// In-place banded Cholesky factorization.
    ///
    /// Inner loops use running offsets: with the (bw+1)-wide storage,
    /// `idx(i, j) = i·bw + bw + j`, so advancing `i` adds `bw`.
    pub fn cholesky(mut self) -> Result<BandedCholesky<T>> {
        let n = self.n;
        let bw = self.bw;
        let band = &mut self.band;
        for j in 0..n {
            let pivot_at = j * bw + bw + j;
            let pivot = band[pivot_at];
            if pivot <= T::zero() || !pivot.is_finite() {
                return Err(Error::SpdViolation(format!(
                    "nonpositive pivot {pivot} at banded index {j}"
                )));
            }
            let ljj = pivot.sqrt();
            band[pivot_at] = ljj;
            let last = (j + bw).min(n - 1);
            let mut at = pivot_at;
            for _i in (j + 1)..=last {
                at += bw;
                band[at] /= ljj;
            }
            for k in (j + 1)..=last {
                let lkj = band[k * bw + bw + j];
                if lkj == T::zero() {
                    continue;
                }
                let mut at_ik = k * bw + bw + k;
                let mut at_ij = k * bw + bw + j;
                for _i in k..=last {
                    band[at_ik] = band[at_ik] - band[at_ij] * lkj;
                    at_ik += bw;
                    at_ij += bw;
                }
            }
        }
        Ok(BandedCholesky {
            n,
            bw,
            band: self.band,
        })
    }
}

/// Banded lower Cholesky factor.
pub struct BandedCholesky<T> {
    n: usize,
    bw: usize,
    band: Vec<T>,
}

impl<T: Scalar> BandedCholesky<T> {
    #[inline]
    fn l(&self, i: usize, j: usize) -> T {
        self.band[i * (self.bw + 1) + (self.bw + j - i)]
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.n;
        let bw = self.bw;
        let mut y = b.to_vec();
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            let mut s = y[i];
            for j in j0..i {
                s = s - self.l(i, j) * y[j];
            }
            y[i] = s / self.l(i, i);
        }
        for i in (0..n).rev() {
            let last = (i + bw).min(n - 1);
            let mut s = y[i];
            for k in (i + 1)..=last {
                s = s - self.l(k, i) * y[k];
            }
            y[i] = s / self.l(i, i);
        }
        y
    }
}

/// Weighted mean and covariance of a sample set; weights must sum to 1.
pub fn weighted_moments<T: Scalar>(samples: &[Vec<T>], weights: &[T]) -> (Vec<T>, SymMat<T>) {
    let d = samples.first().map_or(0, |s| s.len());
    let mut mean = vec![T::zero(); d];
    for (s, &w) in samples.iter().zip(weights) {
        for (m, &x) in mean.iter_mut().zip(s) {
            *m += w * x;
        }
    }
    let mut cov = SymMat::zeros(d);
    for (s, &w) in samples.iter().zip(weights) {
        for i in 0..d {
            let di = s[i] - mean[i];
            for j in 0..=i {
                let dj = s[j] - mean[j];
                let v = cov.get(i, j) + w * di * dj;
                cov.set_sym(i, j, v);
            }
        }
    }
    (mean, cov)
}

/// Unweighted sample mean and population covariance (divisor `n`).
pub fn sample_moments<T: Scalar>(samples: &[Vec<T>]) -> Option<(Vec<T>, SymMat<T>)> {
    if samples.is_empty() {
        return None;
    }
    let w = T::one() / count_as::<T>(samples.len());
    let weights = vec![w; samples.len()];
    Some(weighted_moments(samples, &weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector};
    use rand::Rng;

    fn random_spd(n: usize, rng: &mut impl Rng) -> SymMat<f64> {
        // A = B Bᵀ + I with random B.
        let mut a = SymMat::zeros(n);
        let b: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        for i in 0..n {
            for j in 0..=i {
                let mut s = if i == j { 1.0 } else { 0.0 };
                for k in 0..n {
                    s += b[i][k] * b[j][k];
                }
                a.set_sym(i, j, s);
            }
        }
        a
    }

    #[test]
    fn cholesky_matches_nalgebra() {
        let mut rng = crate::rng::substream(1, crate::rng::tags::USER, 0);
        for n in [1usize, 2, 3, 5, 8] {
            let a = random_spd(n, &mut rng);
            let chol = a.cholesky().unwrap();
            let na = DMatrix::from_fn(n, n, |i, j| a.get(i, j));
            let nchol = na.clone().cholesky().expect("nalgebra cholesky");
            let b: Vec<f64> = (0..n).map(|i| (i as f64) - 1.3).collect();
            let x = chol.solve(&b);
            let nx = nchol.solve(&DVector::from_vec(b.clone()));
            for i in 0..n {
                assert_relative_eq!(x[i], nx[i], max_relative = 1e-10);
            }
            assert_relative_eq!(
                chol.log_det(),
                na.determinant().ln(),
                max_relative = 1e-8
            );
            let quad = chol.inv_quad_form(&b);
            let direct: f64 = b.iter().zip(nx.iter()).map(|(bi, xi)| bi * xi).sum();
            assert_relative_eq!(quad, direct, max_relative = 1e-10);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = SymMat::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert!(matches!(a.cholesky(), Err(Error::SpdViolation(_))));
    }

    #[test]
    fn from_rows_rejects_asymmetry() {
        let r = SymMat::from_rows(&[vec![1.0, 0.5], vec![0.2, 1.0]]);
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn min_eigenvalue_gate() {
        // Eigenvalues 1 and 3.
        let a = SymMat::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        assert!(a.min_eigenvalue_exceeds(0.5));
        assert!(!a.min_eigenvalue_exceeds(1.5));
    }

    #[test]
    fn tridiagonal_matches_dense() {
        let n = 40;
        let lower = vec![-1.0f64; n - 1];
        let upper = vec![-1.0f64; n - 1];
        let diag = vec![2.5f64; n];
        let rhs: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let x = solve_tridiagonal(&lower, &diag, &upper, &rhs).unwrap();
        let a = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                2.5
            } else if i.abs_diff(j) == 1 {
                -1.0
            } else {
                0.0
            }
        });
        let nx = a.lu().solve(&DVector::from_vec(rhs)).unwrap();
        for i in 0..n {
            assert_relative_eq!(x[i], nx[i], max_relative = 1e-10);
        }
    }

    #[test]
    fn banded_cholesky_matches_dense() {
        // 1-D Laplacian-like band with bandwidth 4 and random couplings.
        let mut rng = crate::rng::substream(2, crate::rng::tags::USER, 0);
        let n = 60;
        let bw = 4;
        let mut banded = BandedSpd::zeros(n, bw);
        let mut dense = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            banded.add(i, i, 10.0);
            dense[(i, i)] += 10.0;
            for off in 1..=bw {
                if i >= off {
                    let v = rng.random_range(-1.0..1.0);
                    banded.add(i, i - off, v);
                    dense[(i, i - off)] += v;
                    dense[(i - off, i)] += v;
                }
            }
        }
        let rhs: Vec<f64> = (0..n).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let x = banded.cholesky().unwrap().solve(&rhs);
        let nx = dense.cholesky().unwrap().solve(&DVector::from_vec(rhs));
        for i in 0..n {
            assert_relative_eq!(x[i], nx[i], max_relative = 1e-9);
        }
    }

    #[test]
    fn weighted_moments_hand_example() {
        let samples = vec![vec![0.0], vec![2.0]];
        let weights = vec![0.5, 0.5];
        let (mean, cov) = weighted_moments(&samples, &weights);
        assert_relative_eq!(mean[0], 1.0);
        assert_relative_eq!(cov.get(0, 0), 1.0);
    }
}
