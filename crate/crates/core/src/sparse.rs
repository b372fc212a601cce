//! Compressed sparse row storage, a direct solver for the complex-symmetric
//! saddle-point systems, and conjugate gradients for real SPD systems.
//!
//! The direct solver wraps faer's sparse LU (fill-reducing column ordering,
//! partial row pivoting). Singular input is reported as [`Error::Singular`]:
//! empty rows or columns and symbolic rank deficiency are detected up front,
//! numerical breakdown through a probe solve with a known solution.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::Lu;
use faer::sparse::linalg::LuError;
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Field of matrix entries.
pub trait Scalar:
    Copy
    + PartialEq
    + std::fmt::Debug
    + std::ops::Add<Output = Self>
    + std::ops::AddAssign
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + Send
    + Sync
{
    const ZERO: Self;
    fn modulus(self) -> f64;
}

impl Scalar for f64 {
    const ZERO: Self = 0.0;
    fn modulus(self) -> f64 {
        self.abs()
    }
}

impl Scalar for Complex64 {
    const ZERO: Self = Complex64::new(0.0, 0.0);
    fn modulus(self) -> f64 {
        self.norm()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix<T> {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> CsrMatrix<T> {
    /// Sums duplicate entries in input order, sorts columns within each row
    /// and drops entries that are exactly zero.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, T)]) -> Self {
        let mut counts = vec![0usize; nrows + 1];
        for &(r, c, _) in triplets {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) outside {nrows}x{ncols}");
            counts[r + 1] += 1;
        }
        for i in 0..nrows {
            counts[i + 1] += counts[i];
        }
        // bucket by row, stable in input order
        let mut next = counts.clone();
        let mut bucket: Vec<(usize, T)> = vec![(0, T::ZERO); triplets.len()];
        for &(r, c, v) in triplets {
            bucket[next[r]] = (c, v);
            next[r] += 1;
        }

        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for r in 0..nrows {
            let row = &mut bucket[counts[r]..counts[r + 1]];
            row.sort_by_key(|&(c, _)| c);
            let mut k = 0;
            while k < row.len() {
                let c = row[k].0;
                let mut acc = T::ZERO;
                while k < row.len() && row[k].0 == c {
                    acc += row[k].1;
                    k += 1;
                }
                if acc != T::ZERO {
                    col_idx.push(c);
                    values.push(acc);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self { nrows, ncols, row_ptr, col_idx, values }
    }

    pub fn identity(n: usize) -> Self
    where
        T: From<f64>,
    {
        let trip: Vec<_> = (0..n).map(|i| (i, i, T::from(1.0))).collect();
        Self::from_triplets(n, n, &trip)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[range.clone()].iter().copied().zip(self.values[range].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[range.clone()].binary_search(&j) {
            Ok(k) => self.values[range.start + k],
            Err(_) => T::ZERO,
        }
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        (0..self.nrows).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows)
            .map(|i| self.row(i).fold(T::ZERO, |acc, (j, v)| acc + v * x[j]))
            .collect()
    }

    pub fn transpose(&self) -> Self {
        let trip: Vec<_> = self.triplets().map(|(i, j, v)| (j, i, v)).collect();
        Self::from_triplets(self.ncols, self.nrows, &trip)
    }

    /// `max |M_ij - M_ji|` over the stored pattern of both.
    pub fn max_asymmetry(&self) -> f64 {
        assert_eq!(self.nrows, self.ncols);
        let mut worst: f64 = 0.0;
        for (i, j, v) in self.triplets() {
            worst = worst.max((v - self.get(j, i)).modulus());
        }
        worst
    }

    pub fn diagonal(&self) -> Vec<T> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }
}

impl CsrMatrix<f64> {
    /// Quadratic form `x^T M x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        self.mul_vec(x).iter().zip(x).map(|(a, b)| a * b).sum()
    }

    /// Dense copy, for small test problems.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for (i, j, v) in self.triplets() {
            d[i][j] = v;
        }
        d
    }
}

/// Reusable LU factorization of a square complex matrix.
pub struct Factorization {
    lu: Lu<usize, Complex64>,
    matrix: CsrMatrix<Complex64>,
}

impl std::fmt::Debug for Factorization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Factorization").field("n", &self.matrix.nrows).field("nnz", &self.matrix.nnz()).finish()
    }
}

pub fn factorize(matrix: &CsrMatrix<Complex64>) -> Result<Factorization> {
    let n = matrix.nrows;
    if matrix.ncols != n {
        return Err(Error::Dimension { expected: n, found: matrix.ncols });
    }
    let mut col_used = vec![false; n];
    for i in 0..n {
        let mut any = false;
        for (j, _) in matrix.row(i) {
            col_used[j] = true;
            any = true;
        }
        if !any {
            return Err(Error::Singular { pivot: i });
        }
    }
    if let Some(j) = col_used.iter().position(|&u| !u) {
        return Err(Error::Singular { pivot: j });
    }

    let trip: Vec<Triplet<usize, usize, Complex64>> = matrix.triplets().map(|(i, j, v)| Triplet::new(i, j, v)).collect();
    let csc = SparseColMat::<usize, Complex64>::try_new_from_triplets(n, n, &trip)
        .map_err(|e| Error::Solver(format!("{e:?}")))?;
    let lu = csc.sp_lu().map_err(|e| match e {
        LuError::SymbolicSingular { index } => Error::Singular { pivot: index },
        LuError::Generic(e) => Error::Solver(format!("{e:?}")),
    })?;
    let f = Factorization { lu, matrix: matrix.clone() };

    // Probe: the all-ones vector must be recovered.
    let ones = vec![Complex64::new(1.0, 0.0); n];
    let b = matrix.mul_vec(&ones);
    let x = f.apply_inverse(&b);
    let mut worst = (0.0, 0usize);
    for (i, xi) in x.iter().enumerate() {
        let err = (xi - ones[i]).norm();
        if !err.is_finite() {
            return Err(Error::Singular { pivot: i });
        }
        if err > worst.0 {
            worst = (err, i);
        }
    }
    if worst.0 > 1e-4 {
        return Err(Error::Singular { pivot: worst.1 });
    }
    Ok(f)
}

impl Factorization {
    pub fn dim(&self) -> usize {
        self.matrix.nrows
    }

    pub fn matrix(&self) -> &CsrMatrix<Complex64> {
        &self.matrix
    }

    fn apply_inverse(&self, b: &[Complex64]) -> Vec<Complex64> {
        let n = b.len();
        let rhs = Mat::<Complex64>::from_fn(n, 1, |i, _| b[i]);
        let x = self.lu.solve(&rhs);
        (0..n).map(|i| x[(i, 0)]).collect()
    }

    /// Solves `M x = b` with one step of iterative refinement.
    pub fn solve(&self, b: &[Complex64]) -> Result<Vec<Complex64>> {
        let n = self.dim();
        if b.len() != n {
            return Err(Error::Dimension { expected: n, found: b.len() });
        }
        if b.iter().all(|v| *v == Complex64::new(0.0, 0.0)) {
            return Ok(vec![Complex64::new(0.0, 0.0); n]);
        }
        let mut x = self.apply_inverse(b);
        let mx = self.matrix.mul_vec(&x);
        let r: Vec<Complex64> = b.iter().zip(&mx).map(|(bi, mi)| bi - mi).collect();
        let dx = self.apply_inverse(&r);
        for (xi, di) in x.iter_mut().zip(&dx) {
            *xi += di;
        }
        if let Some(i) = x.iter().position(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(Error::Singular { pivot: i });
        }
        Ok(x)
    }

    /// `||M x - b|| / ||b||`.
    pub fn relative_residual(&self, x: &[Complex64], b: &[Complex64]) -> f64 {
        let mx = self.matrix.mul_vec(x);
        let num: f64 = mx.iter().zip(b).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        let den: f64 = b.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        if den == 0.0 {
            num
        } else {
            num / den
        }
    }
}

#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Final `||b - M x|| / ||b||` (absolute when `b = 0`).
    pub relative_residual: f64,
    pub converged: bool,
}

/// Preconditioned conjugate gradients for a symmetric positive definite
/// operator. `inv_diag` is an optional Jacobi preconditioner.
pub fn cg_solve(
    apply: impl Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    x0: Option<&[f64]>,
    inv_diag: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
) -> CgOutcome {
    let n = b.len();
    let bnorm = norm2(b);
    let mut x = x0.map_or_else(|| vec![0.0; n], |v| v.to_vec());
    let ax = apply(&x);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let scale = if bnorm > 0.0 { bnorm } else { 1.0 };
    let precond = |r: &[f64]| -> Vec<f64> {
        match inv_diag {
            Some(d) => r.iter().zip(d).map(|(a, b)| a * b).collect(),
            None => r.to_vec(),
        }
    };

    let mut rnorm = norm2(&r);
    if rnorm <= tol * scale {
        return CgOutcome { x, iterations: 0, relative_residual: rnorm / scale, converged: true };
    }
    let mut z = precond(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for it in 1..=max_iter {
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            return CgOutcome { x, iterations: it, relative_residual: rnorm / scale, converged: false };
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        rnorm = norm2(&r);
        if rnorm <= tol * scale {
            return CgOutcome { x, iterations: it, relative_residual: rnorm / scale, converged: true };
        }
        z = precond(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    CgOutcome { x, iterations: max_iter, relative_residual: rnorm / scale, converged: false }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    /// Gaussian elimination with partial pivoting on a dense copy.
    fn dense_solve(a: &CsrMatrix<Complex64>, b: &[Complex64]) -> Vec<Complex64> {
        let n = a.nrows();
        let mut m = vec![vec![c(0.0, 0.0); n + 1]; n];
        for (i, j, v) in a.triplets() {
            m[i][j] = v;
        }
        for i in 0..n {
            m[i][n] = b[i];
        }
        for k in 0..n {
            let p = (k..n).max_by(|&x, &y| m[x][k].norm().partial_cmp(&m[y][k].norm()).unwrap()).unwrap();
            m.swap(k, p);
            for i in k + 1..n {
                let f = m[i][k] / m[k][k];
                for j in k..=n {
                    let t = m[k][j];
                    m[i][j] -= f * t;
                }
            }
        }
        let mut x = vec![c(0.0, 0.0); n];
        for i in (0..n).rev() {
            let mut s = m[i][n];
            for j in i + 1..n {
                s -= m[i][j] * x[j];
            }
            x[i] = s / m[i][i];
        }
        x
    }

    fn random_symmetric(n: usize, rng: &mut ChaCha8Rng) -> CsrMatrix<Complex64> {
        let mut trip = Vec::new();
        for i in 0..n {
            trip.push((i, i, c(4.0 + rng.gen::<f64>(), rng.gen::<f64>() - 0.5)));
            for _ in 0..2 {
                let j = rng.gen_range(0..n);
                if j != i {
                    let v = c(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
                    trip.push((i, j, v));
                    trip.push((j, i, v));
                }
            }
        }
        CsrMatrix::from_triplets(n, n, &trip)
    }

    #[test]
    fn triplets_are_summed_and_zeros_dropped() {
        let m = CsrMatrix::from_triplets(2, 3, &[(0, 2, 1.0), (0, 0, 2.0), (0, 2, 3.0), (1, 1, 1.0), (1, 1, -1.0)]);
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.get(0, 2), 4.0);
        assert_eq!(m.get(1, 1), 0.0);
        let cols: Vec<usize> = m.row(0).map(|(j, _)| j).collect();
        assert_eq!(cols, vec![0, 2]);
    }

    #[test]
    fn two_by_two_complex_symmetric() {
        // [[1, i], [i, 1]] x = (1, 0): det = 1 - i^2 = 2, so x = (1/2, -i/2)
        let m = CsrMatrix::from_triplets(2, 2, &[(0, 0, c(1.0, 0.0)), (0, 1, c(0.0, 1.0)), (1, 0, c(0.0, 1.0)), (1, 1, c(1.0, 0.0))]);
        let b = [c(1.0, 0.0), c(0.0, 0.0)];
        let f = factorize(&m).unwrap();
        let x = f.solve(&b).unwrap();
        let oracle = dense_solve(&m, &b);
        for (a, o) in x.iter().zip(&oracle) {
            assert!((a - o).norm() < 1e-14);
        }
        assert!((x[0] - c(0.5, 0.0)).norm() < 1e-14);
        assert!((x[1] - c(0.0, -0.5)).norm() < 1e-14);
    }

    #[test]
    fn identity_returns_rhs() {
        let m = CsrMatrix::<Complex64>::identity(5);
        let b: Vec<Complex64> = (0..5).map(|i| c(i as f64, -(i as f64))).collect();
        let x = factorize(&m).unwrap().solve(&b).unwrap();
        assert_eq!(x, b);
    }

    #[test]
    fn zero_matrix_is_singular() {
        let m = CsrMatrix::from_triplets(3, 3, &[(0, 0, c(0.0, 0.0))]);
        assert!(matches!(factorize(&m), Err(Error::Singular { pivot: 0 })));
        // rank-deficient but structurally full
        let m = CsrMatrix::from_triplets(
            2,
            2,
            &[(0, 0, c(1.0, 0.0)), (0, 1, c(2.0, 0.0)), (1, 0, c(2.0, 0.0)), (1, 1, c(4.0, 0.0))],
        );
        assert!(matches!(factorize(&m), Err(Error::Singular { .. })));
    }

    #[test]
    fn zero_rhs_and_dimension_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_symmetric(10, &mut rng);
        let f = factorize(&m).unwrap();
        assert!(f.solve(&vec![c(0.0, 0.0); 10]).unwrap().iter().all(|v| *v == c(0.0, 0.0)));
        assert!(matches!(f.solve(&[c(1.0, 0.0)]), Err(Error::Dimension { expected: 10, found: 1 })));
    }

    #[test]
    fn random_system_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in [5, 17, 40] {
            let m = random_symmetric(n, &mut rng);
            assert_eq!(m.max_asymmetry(), 0.0);
            let b: Vec<Complex64> = (0..n).map(|_| c(rng.gen::<f64>(), rng.gen::<f64>())).collect();
            let x = factorize(&m).unwrap().solve(&b).unwrap();
            let oracle = dense_solve(&m, &b);
            let err: f64 = x.iter().zip(&oracle).map(|(a, o)| (a - o).norm_sqr()).sum::<f64>().sqrt();
            let scale: f64 = oracle.iter().map(|o| o.norm_sqr()).sum::<f64>().sqrt();
            assert!(err <= 1e-10 * scale, "n={n} err={err}");
        }
    }

    #[test]
    fn factorization_reuse_matches_fresh_factorizations() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_symmetric(30, &mut rng);
        let shared = factorize(&m).unwrap();
        for _ in 0..4 {
            let b: Vec<Complex64> = (0..30).map(|_| c(rng.gen::<f64>(), rng.gen::<f64>())).collect();
            let x1 = shared.solve(&b).unwrap();
            let x2 = factorize(&m).unwrap().solve(&b).unwrap();
            for (a, b2) in x1.iter().zip(&x2) {
                assert!((a - b2).norm() <= 1e-12 * (1.0 + b2.norm()));
            }
            assert!(shared.relative_residual(&x1, &b) <= 1e-10);
        }
    }

    #[test]
    fn cg_identity_one_iteration() {
        let b = vec![1.0, -2.0, 3.0];
        let out = cg_solve(|x| x.to_vec(), &b, None, None, 1e-12, 10);
        assert!(out.converged);
        assert_eq!(out.iterations, 1);
        assert_eq!(out.x, b);
    }

    #[test]
    fn cg_diagonal_finite_termination() {
        let d = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b = [1.0; 5];
        let out = cg_solve(|x| x.iter().zip(&d).map(|(a, b)| a * b).collect(), &b, None, None, 1e-14, 5);
        assert!(out.converged);
        assert!(out.iterations <= 5);
        for i in 0..5 {
            assert!((out.x[i] - 1.0 / d[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn cg_reports_non_convergence() {
        let d: Vec<f64> = (1..=50).map(|i| i as f64).collect();
        let b = vec![1.0; 50];
        let out = cg_solve(|x| x.iter().zip(&d).map(|(a, b)| a * b).collect(), &b, None, None, 1e-14, 3);
        assert!(!out.converged);
        assert_eq!(out.iterations, 3);
        assert!(out.relative_residual > 1e-14);
    }
}
