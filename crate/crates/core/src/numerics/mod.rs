//! Shared dense numerical kernels: eigenvalues, numerical rank, linear
//! programming, DARE and discrete Lyapunov solvers, definiteness tests.
//!
//! Everything here is a pure function of its inputs; the matrices involved
//! are small and dense.

mod lp;

pub use lp::{lp_maximize, lp_minimize, HalfspaceSystem, LpResult, LpStatus};

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

/// Eigenvalues of a square matrix together with the spectral radius.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub eigenvalues: Vec<Complex<f64>>,
    pub spectral_radius: f64,
}

fn check_finite(m: &DMatrix<f64>) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite)
    }
}

/// All eigenvalues of `m` via the real Schur decomposition.
pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Spectrum> {
    if m.nrows() != m.ncols() {
        return Err(Error::NotSquare(m.nrows(), m.ncols()));
    }
    check_finite(m)?;
    let n = m.nrows();
    let schur = nalgebra::Schur::try_new(m.clone(), 1e-14, 100 * n.max(10))
        .ok_or(Error::IterationCap("schur eigenvalue iteration"))?;
    let eig = schur.complex_eigenvalues();
    let eigenvalues: Vec<Complex<f64>> = eig.iter().copied().collect();
    let spectral_radius = eigenvalues.iter().map(|l| l.norm()).fold(0.0, f64::max);
    Ok(Spectrum {
        eigenvalues,
        spectral_radius,
    })
}

/// Spectral radius shortcut.
pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    Ok(eigenvalues(m)?.spectral_radius)
}

/// Number of singular values exceeding `tol` times the largest singular
/// value. `tol = None` uses `max(rows, cols) * eps`.
pub fn numerical_rank(m: &DMatrix<f64>, tol: Option<f64>) -> Result<usize> {
    check_finite(m)?;
    let sv = m.clone().singular_values();
    let smax = sv.iter().copied().fold(0.0f64, f64::max);
    if smax == 0.0 {
        return Ok(0);
    }
    let rel = tol.unwrap_or(m.nrows().max(m.ncols()) as f64 * f64::EPSILON);
    Ok(sv.iter().filter(|s| **s > rel * smax).count())
}

const DARE_TOL: f64 = 1e-13;
const DARE_CAP: usize = 1_000_000;

/// Solve `A'(P - P B (R + B' P B)^-1 B' P) A - P + Q = 0` by fixed-point
/// iteration from `P = Q`.
pub fn dare_solve(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n || q.nrows() != n || q.ncols() != n {
        return Err(Error::Dimension("inconsistent DARE dimensions".into()));
    }
    let m = b.ncols();
    if r.nrows() != m || r.ncols() != m {
        return Err(Error::Dimension("R must be input-dimensioned".into()));
    }
    let mut p = q.clone();
    for _ in 0..DARE_CAP {
        let rpb = r + b.transpose() * &p * b;
        let inv = rpb
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Singular("R + B'PB".into()))?;
        let next = a.transpose() * (&p - &p * b * inv * b.transpose() * &p) * a + q;
        let next = symmetrize(&next);
        let delta = (&next - &p).norm();
        let scale = p.norm().max(1.0);
        p = next;
        if delta <= DARE_TOL * scale {
            return Ok(p);
        }
    }
    Err(Error::IterationCap("DARE fixed-point recursion"))
}

/// Solve `P = Q + S' P S` for Schur stable `S` by the squaring recursion
/// `P <- P + M' P M`, `M <- M^2`. Handles positive semidefinite `Q`.
pub fn dlyap_solve(s: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = s.nrows();
    if s.ncols() != n || q.nrows() != n || q.ncols() != n {
        return Err(Error::Dimension("inconsistent Lyapunov dimensions".into()));
    }
    let radius = spectral_radius(s)?;
    if radius >= 1.0 {
        return Err(Error::NotSchurStable(radius));
    }
    let mut p = q.clone();
    let mut m = s.clone();
    for _ in 0..200 {
        let update = m.transpose() * &p * &m;
        p += &update;
        if update.norm() < 1e-13 * p.norm().max(1.0) {
            return Ok(symmetrize(&p));
        }
        m = &m * &m;
    }
    Err(Error::IterationCap("Lyapunov squaring recursion"))
}

/// True iff the smallest eigenvalue of the symmetric matrix `m` exceeds
/// `1e-12 * ||m||`.
pub fn is_positive_definite(m: &DMatrix<f64>) -> Result<bool> {
    if m.nrows() != m.ncols() {
        return Err(Error::NotSquare(m.nrows(), m.ncols()));
    }
    check_finite(m)?;
    let norm = m.norm();
    if (m - m.transpose()).norm() > 1e-8 * norm.max(1.0) {
        return Err(Error::NotSymmetric);
    }
    let min = min_symmetric_eigenvalue(m);
    Ok(min > 1e-12 * norm)
}

/// Smallest eigenvalue of a (symmetrized) matrix.
pub fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = symmetrize(m);
    let eig = nalgebra::SymmetricEigen::new(sym);
    eig.eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Quadratic form `x' M x`.
pub fn quadratic_form(m: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    (x.transpose() * m * x)[(0, 0)]
}
