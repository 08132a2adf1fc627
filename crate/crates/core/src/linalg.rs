//! Small vector kernels and a thin wrapper over faer's Hermitian eigensolver.

use faer::linalg::solvers::SolveLstsq;
use faer::{Mat, Side};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// `<a|b>` (conjugates the first argument).
#[inline]
pub fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    let mut re = 0.0;
    let mut im = 0.0;
    for (x, y) in a.iter().zip(b) {
        re += x.re * y.re + x.im * y.im;
        im += x.re * y.im - x.im * y.re;
    }
    Complex64::new(re, im)
}

#[inline]
pub fn norm(a: &[Complex64]) -> f64 {
    a.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

#[inline]
pub fn axpy(alpha: Complex64, x: &[Complex64], y: &mut [Complex64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub fn scale(x: &mut [Complex64], alpha: Complex64) {
    for v in x.iter_mut() {
        *v *= alpha;
    }
}

pub fn max_abs_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// Eigenpairs of a Hermitian matrix, eigenvalues ascending; eigenvectors are columns.
pub struct HermitianEigen {
    pub values: Vec<f64>,
    pub vectors: Mat<Complex64>,
}

impl HermitianEigen {
    pub fn vector(&self, j: usize) -> Vec<Complex64> {
        self.vectors.col(j).iter().copied().collect()
    }
}

pub fn hermitian_eigen(m: &Mat<Complex64>) -> Result<HermitianEigen> {
    let eig = m
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Numerical(format!("Hermitian eigensolver failed: {e:?}")))?;
    let values: Vec<f64> = eig.S().column_vector().iter().map(|c| c.re).collect();
    let vectors = eig.U().to_owned();
    Ok(HermitianEigen { values, vectors })
}

/// Eigenvalues only.
pub fn hermitian_eigenvalues(m: &Mat<Complex64>) -> Result<Vec<f64>> {
    let mut vals: Vec<f64> = m
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Numerical(format!("Hermitian eigensolver failed: {e:?}")))?;
    vals.sort_by(|a, b| a.total_cmp(b));
    Ok(vals)
}

/// Symmetric real eigenproblem (used for small Krylov tridiagonals).
pub fn symmetric_eigen(m: &Mat<f64>) -> Result<(Vec<f64>, Mat<f64>)> {
    let eig = m
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Numerical(format!("symmetric eigensolver failed: {e:?}")))?;
    let values: Vec<f64> = eig.S().column_vector().iter().copied().collect();
    Ok((values, eig.U().to_owned()))
}

/// Eigen-decomposition of a small dense Hermitian matrix given as rows.
pub fn hermitian_eigen_rows(rows: &[Vec<Complex64>]) -> Result<HermitianEigen> {
    let n = rows.len();
    let m = Mat::from_fn(n, n, |i, j| rows[i][j]);
    hermitian_eigen(&m)
}

/// Ordinary least squares for `y ≈ X beta` via QR. Returns `beta`.
pub fn least_squares(design: &[Vec<f64>], y: &[f64]) -> Result<Vec<f64>> {
    let n = design.len();
    if n == 0 {
        return Err(Error::Fit("no data".into()));
    }
    let p = design[0].len();
    if n < p {
        return Err(Error::Fit(format!("{n} points for {p} parameters")));
    }
    let x = Mat::from_fn(n, p, |i, j| design[i][j]);
    let rhs = Mat::from_fn(n, 1, |i, _| y[i]);
    let qr = x.qr();
    let r = qr.R();
    // rank check on the triangular factor
    let rmax = (0..p).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if (0..p).any(|i| r[(i, i)].abs() <= 1e-12 * rmax.max(1e-300)) {
        return Err(Error::Fit("degenerate design matrix".into()));
    }
    let sol = qr.solve_lstsq(&rhs);
    Ok((0..p).map(|i| sol[(i, 0)]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn least_squares_recovers_line() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let design: Vec<Vec<f64>> = xs.iter().map(|&x| vec![1.0, x]).collect();
        let y: Vec<f64> = xs.iter().map(|&x| 2.0 - 0.5 * x).collect();
        let beta = least_squares(&design, &y).unwrap();
        assert!((beta[0] - 2.0).abs() < 1e-12 && (beta[1] + 0.5).abs() < 1e-12);
        let degenerate: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x, 2.0 * x]).collect();
        assert!(least_squares(&degenerate, &y).is_err());
    }

    #[test]
    fn eigen_of_pauli_y() {
        let m = Mat::from_fn(2, 2, |i, j| match (i, j) {
            (0, 1) => Complex64::new(0.0, -1.0),
            (1, 0) => Complex64::new(0.0, 1.0),
            _ => Complex64::new(0.0, 0.0),
        });
        let e = hermitian_eigen(&m).unwrap();
        assert!((e.values[0] + 1.0).abs() < 1e-14 && (e.values[1] - 1.0).abs() < 1e-14);
    }
}
