//! Warm-start update and initialization matrices, the augmented
//! closed-loop system, its linear-regime matrix, and closed-loop
//! simulation.
//!
//! The augmented state is `(x, z0, mu0)` of dimension `r = n + 2q`:
//! plant state plus the primal and multiplier warm starts carried across
//! sampling instants.

use nalgebra::{DMatrix, DVector};

use crate::admm::{gain_sequence, AdmmKernel, AdmmParams, AdmmState, GainSequence, KktFactor};
use crate::error::{Error, Result};
use crate::mpc::{stage_cost, CondensedQp, LinearSystem, LqrSolution, MpcSpec};

/// Warm-start update applied to the final iterates between time steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UpdateRule {
    /// `D_z = D_mu = I`: carry iterates over unchanged.
    Copy,
    /// Shift predictions one step, append `u = 0`, `x = A x_N`.
    ShiftZero,
    /// Shift predictions one step, append `u = K x_N`, `x = (A + BK) x_N`.
    ShiftLqr,
}

impl UpdateRule {
    pub const ALL: [UpdateRule; 3] = [
        UpdateRule::ShiftLqr,
        UpdateRule::ShiftZero,
        UpdateRule::Copy,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            UpdateRule::Copy => "copy",
            UpdateRule::ShiftZero => "shift-zero",
            UpdateRule::ShiftLqr => "shift-lqr",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "copy" => Ok(UpdateRule::Copy),
            "shift-zero" => Ok(UpdateRule::ShiftZero),
            "shift-lqr" => Ok(UpdateRule::ShiftLqr),
            other => Err(Error::Invalid(format!("unknown update rule '{other}'"))),
        }
    }
}

/// Initialization of the primal warm start at time zero, `z0 = D0 x0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InitRule {
    /// `D0 = 0`.
    Naive,
    /// Zero-input rollout: `u = 0`, `x_k = A^k x0`.
    Zero,
    /// LQR rollout: `u_k = K S^k x0`, `x_k = S^k x0`.
    Lqr,
}

impl InitRule {
    pub const ALL: [InitRule; 3] = [InitRule::Lqr, InitRule::Zero, InitRule::Naive];

    pub fn as_str(&self) -> &'static str {
        match self {
            InitRule::Naive => "naive",
            InitRule::Zero => "zero",
            InitRule::Lqr => "lqr",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(InitRule::Naive),
            "zero" => Ok(InitRule::Zero),
            "lqr" => Ok(InitRule::Lqr),
            other => Err(Error::Invalid(format!("unknown init rule '{other}'"))),
        }
    }
}

/// Update matrices `(D_z, D_mu)` for the chosen rule.
pub fn update_matrices(
    rule: UpdateRule,
    system: &LinearSystem,
    lqr: &LqrSolution,
    horizon: usize,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = system.state_dim();
    let m = system.input_dim();
    let q = horizon * (n + m);
    match rule {
        UpdateRule::Copy => (DMatrix::identity(q, q), DMatrix::identity(q, q)),
        UpdateRule::ShiftZero | UpdateRule::ShiftLqr => {
            let shift = q - n - m;
            let mut d_z = DMatrix::zeros(q, q);
            // Drop (u_0, x_1), move the remaining predictions forward.
            d_z.view_mut((0, n + m), (shift, shift))
                .copy_from(&DMatrix::identity(shift, shift));
            // Terminal extension from the last predicted state.
            match rule {
                UpdateRule::ShiftZero => {
                    d_z.view_mut((shift + m, q - n), (n, n))
                        .copy_from(&system.a);
                }
                UpdateRule::ShiftLqr => {
                    d_z.view_mut((shift, q - n), (m, n)).copy_from(&lqr.gain);
                    d_z.view_mut((shift + m, q - n), (n, n))
                        .copy_from(&lqr.closed_loop);
                }
                UpdateRule::Copy => unreachable!(),
            }
            let mut d_mu = DMatrix::zeros(q, q);
            d_mu.view_mut((0, n + m), (shift, shift))
                .copy_from(&DMatrix::identity(shift, shift));
            (d_z, d_mu)
        }
    }
}

/// Initialization matrix `D0` for the chosen rule.
pub fn init_matrix(
    rule: InitRule,
    system: &LinearSystem,
    lqr: &LqrSolution,
    horizon: usize,
) -> DMatrix<f64> {
    let n = system.state_dim();
    let m = system.input_dim();
    let q = horizon * (n + m);
    let mut d0 = DMatrix::zeros(q, n);
    match rule {
        InitRule::Naive => {}
        InitRule::Zero => {
            let mut a_pow = system.a.clone();
            for k in 0..horizon {
                let off = k * (n + m);
                d0.view_mut((off + m, 0), (n, n)).copy_from(&a_pow);
                a_pow = &system.a * a_pow;
            }
        }
        InitRule::Lqr => {
            let mut s_pow = DMatrix::identity(n, n);
            for k in 0..horizon {
                let off = k * (n + m);
                d0.view_mut((off, 0), (m, n))
                    .copy_from(&(&lqr.gain * &s_pow));
                s_pow = &lqr.closed_loop * s_pow;
                d0.view_mut((off + m, 0), (n, n)).copy_from(&s_pow);
            }
        }
    }
    d0
}

/// The augmented closed loop: update/initialization matrices, the
/// linear-regime matrix `s_m`, the stacked output map `c_m`, and the data
/// needed to run the nonlinear loop exactly.
#[derive(Debug, Clone)]
pub struct AugmentedModel {
    pub system: LinearSystem,
    pub spec: MpcSpec,
    pub qp: CondensedQp,
    pub factor: KktFactor,
    pub params: AdmmParams,
    pub d_z: DMatrix<f64>,
    pub d_mu: DMatrix<f64>,
    pub d_0: DMatrix<f64>,
    pub gains: GainSequence,
    pub a_aug: DMatrix<f64>,
    pub b_aug: DMatrix<f64>,
    pub s_m: DMatrix<f64>,
    pub c_m: DMatrix<f64>,
}

impl AugmentedModel {
    /// Assemble the augmented system from explicit update matrices. The
    /// rule-based path is `build_augmented`; this entry point also admits
    /// arbitrary `D_z` (e.g. destabilizing overrides).
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        system: LinearSystem,
        spec: MpcSpec,
        qp: CondensedQp,
        factor: KktFactor,
        params: AdmmParams,
        d_z: DMatrix<f64>,
        d_mu: DMatrix<f64>,
        d_0: DMatrix<f64>,
    ) -> Result<Self> {
        let n = system.state_dim();
        let m = system.input_dim();
        let q = qp.dim();
        let r = n + 2 * q;
        if d_z.nrows() != q || d_z.ncols() != q || d_mu.nrows() != q || d_mu.ncols() != q {
            return Err(Error::Dimension("update matrices must be q x q".into()));
        }
        if d_0.nrows() != q || d_0.ncols() != n {
            return Err(Error::Dimension(
                "initialization matrix must be q x n".into(),
            ));
        }
        let gains = gain_sequence(&factor, &qp, params.iterations);

        let mut a_aug = DMatrix::zeros(r, r);
        a_aug.view_mut((0, 0), (n, n)).copy_from(&system.a);

        let mut b_aug = DMatrix::zeros(r, 2 * q);
        b_aug.view_mut((0, 0), (n, m)).copy_from(&system.b); // B * C_u
        b_aug.view_mut((n, 0), (q, q)).copy_from(&d_z);
        b_aug.view_mut((n + q, q), (q, q)).copy_from(&d_mu);

        // S_M = A_aug + B_aug [K_M; 0]
        let k_m = gains.gain(params.iterations);
        let mut lifted = DMatrix::zeros(2 * q, r);
        lifted.view_mut((0, 0), (q, r)).copy_from(k_m);
        let s_m = &a_aug + &b_aug * lifted;

        // C_M stacks C_x, C_z, K_1, ..., K_M.
        let mut c_m = DMatrix::zeros(n + q + params.iterations * q, r);
        c_m.view_mut((0, 0), (n, n))
            .copy_from(&DMatrix::identity(n, n));
        c_m.view_mut((n, n), (q, q))
            .copy_from(&DMatrix::identity(q, q));
        for (j, k) in gains.iter().enumerate() {
            c_m.view_mut((n + q + j * q, 0), (q, r)).copy_from(k);
        }

        Ok(Self {
            system,
            spec,
            qp,
            factor,
            params,
            d_z,
            d_mu,
            d_0,
            gains,
            a_aug,
            b_aug,
            s_m,
            c_m,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.system.state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.system.input_dim()
    }

    pub fn z_dim(&self) -> usize {
        self.qp.dim()
    }

    /// Augmented dimension `r = n + 2q`.
    pub fn aug_dim(&self) -> usize {
        self.state_dim() + 2 * self.z_dim()
    }

    /// Selector picking the first input from `z`.
    pub fn c_u(&self) -> DMatrix<f64> {
        let m = self.input_dim();
        let q = self.z_dim();
        let mut c = DMatrix::zeros(m, q);
        c.view_mut((0, 0), (m, m))
            .copy_from(&DMatrix::identity(m, m));
        c
    }

    pub fn c_x(&self) -> DMatrix<f64> {
        let n = self.state_dim();
        let mut c = DMatrix::zeros(n, self.aug_dim());
        c.view_mut((0, 0), (n, n))
            .copy_from(&DMatrix::identity(n, n));
        c
    }

    pub fn c_z(&self) -> DMatrix<f64> {
        let n = self.state_dim();
        let q = self.z_dim();
        let mut c = DMatrix::zeros(q, self.aug_dim());
        c.view_mut((0, n), (q, q))
            .copy_from(&DMatrix::identity(q, q));
        c
    }

    pub fn c_mu(&self) -> DMatrix<f64> {
        let n = self.state_dim();
        let q = self.z_dim();
        let mut c = DMatrix::zeros(q, self.aug_dim());
        c.view_mut((0, n + q), (q, q))
            .copy_from(&DMatrix::identity(q, q));
        c
    }

    /// Augmented initial state `(x0, D0 x0, 0)`.
    pub fn initial_state(&self, x0: &DVector<f64>) -> DVector<f64> {
        let n = self.state_dim();
        let q = self.z_dim();
        let mut aug = DVector::zeros(self.aug_dim());
        aug.rows_mut(0, n).copy_from(x0);
        aug.rows_mut(n, q).copy_from(&(&self.d_0 * x0));
        aug
    }

    pub fn split(&self, x_aug: &DVector<f64>) -> (DVector<f64>, AdmmState) {
        let n = self.state_dim();
        let q = self.z_dim();
        let x = x_aug.rows(0, n).into_owned();
        let state = AdmmState::new(
            x_aug.rows(n, q).into_owned(),
            x_aug.rows(n + q, q).into_owned(),
        );
        (x, state)
    }

    /// One closed-loop step: run the per-sample ADMM iterations, apply the
    /// first predicted input, and carry the warm starts forward. Returns
    /// the next augmented state and the applied input.
    pub fn closed_loop_step(&self, x_aug: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let n = self.state_dim();
        let m = self.input_dim();
        let q = self.z_dim();
        let (x, init) = self.split(x_aug);
        let kernel = AdmmKernel::new(&self.factor, &self.qp, &x);
        let finals = kernel.run(&init, self.params.iterations);
        let u = finals.z.rows(0, m).into_owned();
        let x_next = &self.system.a * &x + &self.system.b * &u;
        let mut next = DVector::zeros(self.aug_dim());
        next.rows_mut(0, n).copy_from(&x_next);
        next.rows_mut(n, q).copy_from(&(&self.d_z * &finals.z));
        next.rows_mut(n + q, q)
            .copy_from(&(&self.d_mu * &finals.mu));
        (next, u)
    }
}

/// Build the augmented model from warm-start rules.
#[allow(clippy::too_many_arguments)]
pub fn build_augmented(
    qp: &CondensedQp,
    factor: &KktFactor,
    params: AdmmParams,
    update_rule: UpdateRule,
    init_rule: InitRule,
    system: &LinearSystem,
    lqr: &LqrSolution,
    spec: &MpcSpec,
) -> Result<AugmentedModel> {
    let (d_z, d_mu) = update_matrices(update_rule, system, lqr, spec.horizon);
    let d_0 = init_matrix(init_rule, system, lqr, spec.horizon);
    AugmentedModel::from_parts(
        system.clone(),
        spec.clone(),
        qp.clone(),
        factor.clone(),
        params,
        d_z,
        d_mu,
        d_0,
    )
}

/// Closed-loop run with per-step inputs and stage costs recorded. Stops
/// when `stop` returns true for the current augmented state or after
/// `max_steps` steps. Inputs are applied as computed; state-constraint
/// violations are recorded by the caller, not prevented here.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub stage_costs: Vec<f64>,
}

pub fn simulate<F>(
    model: &AugmentedModel,
    x_aug_0: DVector<f64>,
    max_steps: usize,
    mut stop: F,
) -> Trajectory
where
    F: FnMut(&DVector<f64>) -> bool,
{
    let mut states = vec![x_aug_0];
    let mut inputs = Vec::new();
    let mut stage_costs = Vec::new();
    for _ in 0..max_steps {
        let current = states.last().unwrap();
        if stop(current) {
            break;
        }
        let (x, _) = model.split(current);
        let (next, u) = model.closed_loop_step(current);
        stage_costs.push(stage_cost(&x, &u, &model.spec));
        inputs.push(u);
        states.push(next);
    }
    Trajectory {
        states,
        inputs,
        stage_costs,
    }
}
