//! Precomputed KKT-inverse blocks, the two-step ADMM iteration, the
//! linear-regime gain sequence, and accuracy-targeted solves.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mpc::{BoxSet, CondensedQp};
use crate::numerics;

/// Penalty weight and per-step iteration count of a real-time scheme.
#[derive(Debug, Clone, Copy)]
pub struct AdmmParams {
    pub rho: f64,
    pub iterations: usize,
}

impl AdmmParams {
    pub fn new(rho: f64, iterations: usize) -> Result<Self> {
        if !rho.is_finite() || rho <= 0.0 {
            return Err(Error::Invalid("rho must be positive".into()));
        }
        if iterations < 1 {
            return Err(Error::Invalid("iteration count must be at least 1".into()));
        }
        Ok(Self { rho, iterations })
    }
}

/// Blocks of the inverse KKT matrix `[[H + rho I, G'], [G, 0]]^-1`. The
/// lower-right block is never used by the iterations and is not stored.
#[derive(Debug, Clone)]
pub struct KktFactor {
    pub e11: DMatrix<f64>,
    pub e12: DMatrix<f64>,
    pub rho: f64,
}

/// Compute the KKT-inverse blocks by block elimination on `H + rho I`.
pub fn kkt_factor(qp: &CondensedQp, rho: f64) -> Result<KktFactor> {
    if !rho.is_finite() || rho <= 0.0 {
        return Err(Error::Invalid("rho must be positive".into()));
    }
    let q = qp.dim();
    let reg = &qp.h + rho * DMatrix::identity(q, q);
    let chol = reg
        .cholesky()
        .ok_or_else(|| Error::Singular("H + rho I".into()))?;
    // W = (H + rho I)^-1
    let w = chol.solve(&DMatrix::identity(q, q));
    let wgt = &w * qp.g.transpose();
    let schur = &qp.g * &wgt;
    let schur_chol = schur
        .cholesky()
        .ok_or_else(|| Error::Singular("G (H + rho I)^-1 G' (rank-deficient G)".into()))?;
    // E12 = W G' (G W G')^-1
    let e12 = schur_chol.solve(&wgt.transpose()).transpose();
    let e11 = &w - &wgt * schur_chol.solve(&wgt.transpose());
    Ok(KktFactor {
        e11: numerics::symmetrize(&e11),
        e12,
        rho,
    })
}

/// ADMM iterate pair `(z, mu)`.
#[derive(Debug, Clone)]
pub struct AdmmState {
    pub z: DVector<f64>,
    pub mu: DVector<f64>,
}

impl AdmmState {
    pub fn zero(dim: usize) -> Self {
        Self {
            z: DVector::zeros(dim),
            mu: DVector::zeros(dim),
        }
    }

    pub fn new(z: DVector<f64>, mu: DVector<f64>) -> Self {
        Self { z, mu }
    }
}

/// Elementwise clamp onto the box.
pub fn project_box(v: &DVector<f64>, bounds: &BoxSet) -> DVector<f64> {
    DVector::from_iterator(
        v.len(),
        v.iter()
            .zip(bounds.lower.iter().zip(bounds.upper.iter()))
            .map(|(vi, (lo, hi))| vi.clamp(*lo, *hi)),
    )
}

/// The two-step iteration for a fixed state `x`, with `E12 F x`
/// precomputed once.
pub struct AdmmKernel<'a> {
    factor: &'a KktFactor,
    bounds: &'a BoxSet,
    fx_term: DVector<f64>,
}

impl<'a> AdmmKernel<'a> {
    pub fn new(factor: &'a KktFactor, qp: &'a CondensedQp, x: &DVector<f64>) -> Self {
        let fx_term = &factor.e12 * (&qp.f * x);
        Self {
            factor,
            bounds: &qp.bounds,
            fx_term,
        }
    }

    pub fn rho(&self) -> f64 {
        self.factor.rho
    }

    /// One ADMM step:
    /// `z+ = proj(E11 (rho z - mu) + E12 F x + mu / rho)`,
    /// `mu+ = mu + rho (E11 (rho z - mu) + E12 F x - z+)`.
    pub fn step(&self, state: &AdmmState) -> AdmmState {
        let rho = self.factor.rho;
        let y = &self.factor.e11 * (rho * &state.z - &state.mu) + &self.fx_term;
        let zeta = &y + &state.mu / rho;
        let z_next = project_box(&zeta, self.bounds);
        let mu_next = rho * (&zeta - &z_next);
        AdmmState::new(z_next, mu_next)
    }

    pub fn run(&self, init: &AdmmState, iterations: usize) -> AdmmState {
        let mut state = init.clone();
        for _ in 0..iterations {
            state = self.step(&state);
        }
        state
    }

    /// Like `run` but keeps every iterate, including the initial one.
    pub fn run_history(&self, init: &AdmmState, iterations: usize) -> Vec<AdmmState> {
        let mut history = Vec::with_capacity(iterations + 1);
        history.push(init.clone());
        for _ in 0..iterations {
            let next = self.step(history.last().unwrap());
            history.push(next);
        }
        history
    }

    /// Smallest iteration count `j` with `||z_j - z_star||^2 <= eps`,
    /// together with the iterate at stopping time.
    pub fn iterations_to_accuracy(
        &self,
        init: &AdmmState,
        z_star: &DVector<f64>,
        eps: f64,
        cap: usize,
    ) -> Result<(usize, AdmmState)> {
        let mut state = init.clone();
        for j in 0..=cap {
            if (&state.z - z_star).norm_squared() <= eps {
                return Ok((j, state));
            }
            state = self.step(&state);
        }
        Err(Error::IterationCap("accuracy-targeted ADMM"))
    }
}

/// Convenience wrapper building a kernel for a single step.
pub fn admm_step(
    state: &AdmmState,
    x: &DVector<f64>,
    factor: &KktFactor,
    qp: &CondensedQp,
) -> AdmmState {
    AdmmKernel::new(factor, qp, x).step(state)
}

/// `iterations` composed steps.
pub fn admm_run(
    x: &DVector<f64>,
    init: &AdmmState,
    iterations: usize,
    factor: &KktFactor,
    qp: &CondensedQp,
) -> AdmmState {
    AdmmKernel::new(factor, qp, x).run(init, iterations)
}

/// The gain sequence mapping the augmented state `(x, z0, mu0)` to the
/// iterate `z_j` while no box constraint is active:
///
/// ```text
///   K_j = [ (sum_{i<j} (rho E11)^i) E12 F | (rho E11)^j
///         | (rho E11)^{j-1} ((1/rho) I - E11) ]
/// ```
#[derive(Debug, Clone)]
pub struct GainSequence {
    gains: Vec<DMatrix<f64>>,
}

impl GainSequence {
    /// `K_j` for `j` in `1..=M`.
    pub fn gain(&self, j: usize) -> &DMatrix<f64> {
        &self.gains[j - 1]
    }

    pub fn len(&self) -> usize {
        self.gains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gains.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &DMatrix<f64>> {
        self.gains.iter()
    }
}

pub fn gain_sequence(factor: &KktFactor, qp: &CondensedQp, iterations: usize) -> GainSequence {
    let q = qp.dim();
    let n = qp.f.ncols();
    let rho = factor.rho;
    let e12f = &factor.e12 * &qp.f;
    let rho_e11 = rho * &factor.e11;
    let mu_block_base = DMatrix::identity(q, q) / rho - &factor.e11;
    let mut gains = Vec::with_capacity(iterations);
    let mut pow_prev = DMatrix::identity(q, q); // (rho E11)^{j-1}
    let mut partial_sum = DMatrix::zeros(q, q); // sum_{i<j} (rho E11)^i
    for _ in 1..=iterations {
        partial_sum += &pow_prev;
        let pow = &pow_prev * &rho_e11; // (rho E11)^j
        let mut k = DMatrix::zeros(q, n + 2 * q);
        k.view_mut((0, 0), (q, n))
            .copy_from(&(&partial_sum * &e12f));
        k.view_mut((0, n), (q, q)).copy_from(&pow);
        k.view_mut((0, n + q), (q, q))
            .copy_from(&(&pow_prev * &mu_block_base));
        gains.push(k);
        pow_prev = pow;
    }
    GainSequence { gains }
}

/// The contraction metric `rho ||z - z*||^2 + (1/rho) ||mu - mu*||^2`.
pub fn contraction_metric(
    state: &AdmmState,
    z_star: &DVector<f64>,
    mu_star: &DVector<f64>,
    rho: f64,
) -> f64 {
    rho * (&state.z - z_star).norm_squared() + (&state.mu - mu_star).norm_squared() / rho
}
