//! Problem data model, QP condensing, LQR solution, feasibility of the
//! finite-horizon optimal control problem, and a to-convergence reference
//! QP solver.
//!
//! The OCP
//!
//! ```text
//!     min  phi(x_N) + sum_k l(x_k, u_k)   s.t. dynamics, box constraints
//! ```
//!
//! is rewritten as `min 1/2 z'Hz + x'Qx  s.t.  Gz = Fx, z in [z_lo, z_hi]`
//! with the stacked decision variable `z = (u_0, x_1, ..., u_{N-1}, x_N)`.

use nalgebra::{DMatrix, DVector};

use crate::admm::{self, AdmmState};
use crate::error::{Error, Result};
use crate::numerics::{self, HalfspaceSystem, LpStatus};

/// Discrete-time plant `x(k+1) = A x(k) + B u(k)`.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl LinearSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::NotSquare(a.nrows(), a.ncols()));
        }
        if b.nrows() != a.nrows() {
            return Err(Error::Dimension(format!(
                "A is {}x{} but B has {} rows",
                a.nrows(),
                a.ncols(),
                b.nrows()
            )));
        }
        Ok(Self { a, b })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }
}

/// Box `lower <= v <= upper` with the origin strictly inside.
#[derive(Debug, Clone)]
pub struct BoxSet {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl BoxSet {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Dimension("box bound lengths differ".into()));
        }
        if !lower
            .iter()
            .zip(upper.iter())
            .all(|(l, u)| *l < 0.0 && 0.0 < *u)
        {
            return Err(Error::Invalid(
                "box bounds must satisfy lower < 0 < upper".into(),
            ));
        }
        Ok(Self { lower, upper })
    }

    pub fn symmetric(half_width: DVector<f64>) -> Result<Self> {
        let upper = half_width;
        let lower = -&upper;
        Self::new(lower, upper)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, v: &DVector<f64>, tol: f64) -> bool {
        v.iter()
            .zip(self.lower.iter().zip(self.upper.iter()))
            .all(|(vi, (lo, hi))| *vi >= lo - tol && *vi <= hi + tol)
    }
}

/// MPC weights and horizon. `p` is the DARE solution for the plant.
#[derive(Debug, Clone)]
pub struct MpcSpec {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub horizon: usize,
}

impl MpcSpec {
    /// Build the spec by solving the DARE for the terminal weight.
    pub fn from_weights(
        system: &LinearSystem,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        horizon: usize,
    ) -> Result<Self> {
        if horizon < 1 {
            return Err(Error::Invalid("horizon must be at least 1".into()));
        }
        let p = numerics::dare_solve(&system.a, &system.b, &q, &r)?;
        Ok(Self { q, r, p, horizon })
    }
}

/// Full problem bundle: plant, constraint boxes, and weights.
#[derive(Debug, Clone)]
pub struct MpcProblem {
    pub system: LinearSystem,
    pub state_box: BoxSet,
    pub input_box: BoxSet,
    pub spec: MpcSpec,
}

impl MpcProblem {
    /// Validates dimensions and stabilizability (LQR closed loop must be
    /// Schur stable).
    pub fn new(
        system: LinearSystem,
        state_box: BoxSet,
        input_box: BoxSet,
        spec: MpcSpec,
    ) -> Result<Self> {
        if state_box.dim() != system.state_dim() || input_box.dim() != system.input_dim() {
            return Err(Error::Dimension(
                "constraint boxes do not match plant".into(),
            ));
        }
        let lqr = lqr_gain(&system, &spec)?;
        let radius = numerics::spectral_radius(&lqr.closed_loop)?;
        if radius >= 1.0 - 1e-9 {
            return Err(Error::NotSchurStable(radius));
        }
        Ok(Self {
            system,
            state_box,
            input_box,
            spec,
        })
    }
}

/// The uncondensed QP data: `min 1/2 z'Hz + x'Qx` s.t. `Gz = Fx`,
/// `z` in `bounds`.
#[derive(Debug, Clone)]
pub struct CondensedQp {
    pub h: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub bounds: BoxSet,
    /// Constant cost weight on the current state (`x'Qx` term).
    pub state_weight: DMatrix<f64>,
    pub state_dim: usize,
    pub input_dim: usize,
    pub horizon: usize,
}

impl CondensedQp {
    /// Number of equality rows, `N * n`.
    pub fn eq_rows(&self) -> usize {
        self.g.nrows()
    }

    /// Decision-variable dimension, `N * (n + m)`.
    pub fn dim(&self) -> usize {
        self.g.ncols()
    }

    /// QP value `1/2 z'Hz + x'Qx`.
    pub fn value(&self, z: &DVector<f64>, x: &DVector<f64>) -> f64 {
        0.5 * numerics::quadratic_form(&self.h, z) + numerics::quadratic_form(&self.state_weight, x)
    }
}

/// LQR gain `K = -(R + B'PB)^-1 B'PA` and closed loop `A + BK`.
#[derive(Debug, Clone)]
pub struct LqrSolution {
    pub gain: DMatrix<f64>,
    pub closed_loop: DMatrix<f64>,
}

pub fn lqr_gain(system: &LinearSystem, spec: &MpcSpec) -> Result<LqrSolution> {
    let bt_p = system.b.transpose() * &spec.p;
    let inner = &spec.r + &bt_p * &system.b;
    let inv = inner
        .try_inverse()
        .ok_or_else(|| Error::Singular("R + B'PB".into()))?;
    let gain = -(inv * &bt_p * &system.a);
    let closed_loop = &system.a + &system.b * &gain;
    Ok(LqrSolution { gain, closed_loop })
}

/// Condense the OCP into the stacked QP form.
pub fn build_qp(
    system: &LinearSystem,
    state_box: &BoxSet,
    input_box: &BoxSet,
    spec: &MpcSpec,
) -> Result<CondensedQp> {
    let n = system.state_dim();
    let m = system.input_dim();
    let big_n = spec.horizon;
    if state_box.dim() != n || input_box.dim() != m {
        return Err(Error::Dimension(
            "constraint boxes do not match plant".into(),
        ));
    }
    if spec.q.nrows() != n || spec.r.nrows() != m || spec.p.nrows() != n {
        return Err(Error::Dimension("weights do not match plant".into()));
    }
    let p_rows = big_n * n;
    let q_cols = big_n * (n + m);

    // H = blockdiag(2R, 2Q, ..., 2R, 2P): 1/2 z'Hz reproduces the stage
    // costs for z = (u_0, x_1, ..., u_{N-1}, x_N).
    let mut h = DMatrix::zeros(q_cols, q_cols);
    for k in 0..big_n {
        let off = k * (n + m);
        h.view_mut((off, off), (m, m)).copy_from(&(2.0 * &spec.r));
        let w = if k + 1 == big_n { &spec.p } else { &spec.q };
        h.view_mut((off + m, off + m), (n, n)).copy_from(&(2.0 * w));
    }

    // Block-banded G: row block 0 is [-B I 0 ...]; block i couples
    // x_{i+1} = A x_i + B u_i.
    let mut g = DMatrix::zeros(p_rows, q_cols);
    for i in 0..big_n {
        let row = i * n;
        let u_col = i * (n + m);
        g.view_mut((row, u_col), (n, m)).copy_from(&(-&system.b));
        g.view_mut((row, u_col + m), (n, n))
            .copy_from(&DMatrix::identity(n, n));
        if i > 0 {
            let xprev_col = (i - 1) * (n + m) + m;
            g.view_mut((row, xprev_col), (n, n))
                .copy_from(&(-&system.a));
        }
    }

    let mut f = DMatrix::zeros(p_rows, n);
    f.view_mut((0, 0), (n, n)).copy_from(&system.a);

    // z bounds interleave U then X for every horizon step.
    let mut lower = DVector::zeros(q_cols);
    let mut upper = DVector::zeros(q_cols);
    for k in 0..big_n {
        let off = k * (n + m);
        lower.rows_mut(off, m).copy_from(&input_box.lower);
        upper.rows_mut(off, m).copy_from(&input_box.upper);
        lower.rows_mut(off + m, n).copy_from(&state_box.lower);
        upper.rows_mut(off + m, n).copy_from(&state_box.upper);
    }

    Ok(CondensedQp {
        h,
        g,
        f,
        bounds: BoxSet::new(lower, upper)?,
        state_weight: spec.q.clone(),
        state_dim: n,
        input_dim: m,
        horizon: big_n,
    })
}

/// True iff `x` lies in the state box and some `z` within bounds satisfies
/// `Gz = Fx` (phase-1 LP feasibility at 1e-9 slack).
pub fn ocp_feasible(qp: &CondensedQp, state_box: &BoxSet, x: &DVector<f64>) -> bool {
    if !state_box.contains(x, 1e-9) {
        return false;
    }
    let q = qp.dim();
    let p = qp.eq_rows();
    let fx = &qp.f * x;
    let mut rows = DMatrix::zeros(p + q, q);
    rows.view_mut((0, 0), (p, q)).copy_from(&qp.g);
    rows.view_mut((p, 0), (q, q))
        .copy_from(&DMatrix::identity(q, q));
    let mut lower = DVector::zeros(p + q);
    let mut upper = DVector::zeros(p + q);
    lower.rows_mut(0, p).copy_from(&fx);
    upper.rows_mut(0, p).copy_from(&fx);
    lower.rows_mut(p, q).copy_from(&qp.bounds.lower);
    upper.rows_mut(p, q).copy_from(&qp.bounds.upper);
    let sys = match HalfspaceSystem::new(rows, lower, upper) {
        Ok(s) => s,
        Err(_) => return false,
    };
    matches!(
        numerics::lp_maximize(&DVector::zeros(q), &sys),
        Ok(res) if res.status == LpStatus::Optimal
    )
}

/// Primal/dual optimizers and optimal value of the QP at state `x`.
#[derive(Debug, Clone)]
pub struct ReferenceSolution {
    pub z: DVector<f64>,
    pub mu: DVector<f64>,
    pub value: f64,
}

/// Penalty weight used by the reference solver regardless of the
/// parametrization under study.
pub const REFERENCE_RHO: f64 = 10.0;
pub const REFERENCE_CAP: usize = 1_000_000;

/// Solve the QP to convergence by ADMM at a fixed penalty weight. Stops
/// when both the primal change and the scaled multiplier change drop below
/// `tol` in the infinity norm.
pub fn solve_qp_reference(
    qp: &CondensedQp,
    x: &DVector<f64>,
    tol: f64,
) -> Result<ReferenceSolution> {
    let factor = admm::kkt_factor(qp, REFERENCE_RHO)?;
    let kernel = admm::AdmmKernel::new(&factor, qp, x);
    let mut state = AdmmState::zero(qp.dim());
    for _ in 0..REFERENCE_CAP {
        let next = kernel.step(&state);
        let dz = (&next.z - &state.z).amax();
        let dmu = (&next.mu - &state.mu).amax() / REFERENCE_RHO;
        state = next;
        if dz <= tol && dmu <= tol {
            let value = qp.value(&state.z, x);
            return Ok(ReferenceSolution {
                z: state.z,
                mu: state.mu,
                value,
            });
        }
    }
    Err(Error::IterationCap("reference QP solver"))
}

/// Stage cost `x'Qx + u'Ru`.
pub fn stage_cost(x: &DVector<f64>, u: &DVector<f64>, spec: &MpcSpec) -> f64 {
    numerics::quadratic_form(&spec.q, x) + numerics::quadratic_form(&spec.r, u)
}

/// Terminal cost `x'Px`.
pub fn terminal_cost(x: &DVector<f64>, spec: &MpcSpec) -> f64 {
    numerics::quadratic_form(&spec.p, x)
}
