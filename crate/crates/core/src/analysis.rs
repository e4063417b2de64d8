//! Closed-loop analysis and the benchmark pipeline: cost-to-go inside the
//! invariant region, feasible-state sampling, trajectory classification,
//! classical-MPC baselines, warm-started iteration counts, and the full
//! parameter sweep.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::admm::{kkt_factor, AdmmKernel, AdmmParams, AdmmState, KktFactor};
use crate::augmented::{
    build_augmented, init_matrix, update_matrices, AugmentedModel, InitRule, UpdateRule,
};
use crate::error::{Error, Result};
use crate::mpc::{
    build_qp, lqr_gain, ocp_feasible, solve_qp_reference, stage_cost, terminal_cost, BoxSet,
    CondensedQp, MpcProblem, MpcSpec, ReferenceSolution,
};
use crate::numerics::{dlyap_solve, quadratic_form};
use crate::sets::{polygon_area, pstar_set, slice_2d, terminal_set, AdmissibleSet, DEFAULT_K_CAP};

/// Quadratic cost data inside the invariant region: the effective stage
/// weight on the augmented state and the Lyapunov solution giving the
/// infinite-horizon tail `x_aug' P x_aug`.
#[derive(Debug, Clone)]
pub struct CostToGo {
    pub q_aug: DMatrix<f64>,
    pub p_aug: DMatrix<f64>,
}

impl CostToGo {
    pub fn tail_cost(&self, x_aug: &DVector<f64>) -> f64 {
        quadratic_form(&self.p_aug, x_aug)
    }
}

/// Solve `P = Q_aug + S_M' P S_M` for the augmented stage weight
/// `Q_aug = C_x' Q C_x + K_M' C_u' R C_u K_M`.
pub fn cost_to_go(model: &AugmentedModel) -> Result<CostToGo> {
    let c_x = model.c_x();
    let c_u = model.c_u();
    let k_m = model.gains.gain(model.params.iterations);
    let u_map = &c_u * k_m; // input as a function of the augmented state
    let q_aug = c_x.transpose() * &model.spec.q * &c_x + u_map.transpose() * &model.spec.r * &u_map;
    let p_aug = dlyap_solve(&model.s_m, &q_aug)?;
    Ok(CostToGo { q_aug, p_aug })
}

/// Draw `count` states uniformly from the feasible region of the OCP by
/// rejection sampling over the state box.
pub fn sample_feasible_states<R: Rng + ?Sized>(
    qp: &CondensedQp,
    state_box: &BoxSet,
    count: usize,
    rng: &mut R,
) -> Result<Vec<DVector<f64>>> {
    let n = state_box.dim();
    let mut out = Vec::with_capacity(count);
    let mut draws = 0usize;
    while out.len() < count {
        draws += 1;
        if draws > 1_000_000 && (out.len() as f64) < 0.001 * draws as f64 {
            return Err(Error::Infeasible(
                "feasible region acceptance rate below 0.1%".into(),
            ));
        }
        let x = DVector::from_fn(n, |i, _| {
            rng.gen_range(state_box.lower[i]..state_box.upper[i])
        });
        if ocp_feasible(qp, state_box, &x) {
            out.push(x);
        }
    }
    Ok(out)
}

/// A classical MPC run solved to convergence at every step, stopped at
/// the terminal set. References are kept for every visited state
/// (including the terminal one) for reuse by the iteration-count study.
#[derive(Debug, Clone)]
pub struct BaselineTrajectory {
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub references: Vec<ReferenceSolution>,
    /// First step index with `x` in the terminal set.
    pub entry_step: usize,
    /// Total cost: stage costs before entry plus the terminal cost.
    pub cost: f64,
}

pub fn mpc_trajectory(
    qp: &CondensedQp,
    terminal: &AdmissibleSet,
    spec: &MpcSpec,
    x0: &DVector<f64>,
    cap: usize,
    reference_tol: f64,
) -> Result<BaselineTrajectory> {
    let m = qp.input_dim;
    let mut states = vec![x0.clone()];
    let mut inputs = Vec::new();
    let mut references = Vec::new();
    let mut cost = 0.0;
    for _ in 0..=cap {
        let x = states.last().unwrap().clone();
        let reference = solve_qp_reference(qp, &x, reference_tol)?;
        let entered = terminal.contains(&x, 1e-9);
        if entered {
            references.push(reference);
            cost += terminal_cost(&x, spec);
            return Ok(BaselineTrajectory {
                entry_step: states.len() - 1,
                states,
                inputs,
                references,
                cost,
            });
        }
        let u = reference.z.rows(0, m).into_owned();
        cost += stage_cost(&x, &u, spec);
        references.push(reference);
        states.push(qp_state_step(qp, &x, &u));
        inputs.push(u);
    }
    Err(Error::IterationCap(
        "classical MPC did not reach the terminal set",
    ))
}

fn qp_state_step(qp: &CondensedQp, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    // The plant matrices are recoverable from the condensed data: the
    // first block row of G is [-B I 0 ...] and F stacks A on zeros.
    let n = qp.state_dim;
    let m = qp.input_dim;
    let a = qp.f.view((0, 0), (n, n));
    let b = -qp.g.view((0, 0), (n, m));
    a * x + b * u
}

/// Outcome of one approximate closed-loop run.
#[derive(Debug, Clone)]
pub struct TrajectoryVerdict {
    pub converged: bool,
    /// Step index of entry into the invariant region, when converged.
    pub entry_step: Option<usize>,
    /// Total infinite-horizon cost, when converged.
    pub cost: Option<f64>,
    /// True iff the state stayed within the state box for the whole run.
    pub violation_free: bool,
}

/// Run the approximate loop from `x_aug_0` and classify it: converging
/// means entering the invariant region within `horizon` steps, in which
/// case the total cost is the recorded stage costs plus the quadratic
/// tail.
pub fn classify_trajectory(
    model: &AugmentedModel,
    pstar: &AdmissibleSet,
    ctg: &CostToGo,
    state_box: &BoxSet,
    x_aug_0: DVector<f64>,
    horizon: usize,
) -> TrajectoryVerdict {
    let mut x_aug = x_aug_0;
    let mut running_cost = 0.0;
    let mut violation_free = true;
    for k in 0..=horizon {
        let (x, _) = model.split(&x_aug);
        if !state_box.contains(&x, 1e-9) {
            violation_free = false;
        }
        if pstar.contains(&x_aug, 1e-9) {
            return TrajectoryVerdict {
                converged: true,
                entry_step: Some(k),
                cost: Some(running_cost + ctg.tail_cost(&x_aug)),
                violation_free,
            };
        }
        if k == horizon {
            break;
        }
        let (next, u) = model.closed_loop_step(&x_aug);
        running_cost += stage_cost(&x, &u, &model.spec);
        x_aug = next;
    }
    TrajectoryVerdict {
        converged: false,
        entry_step: None,
        cost: None,
        violation_free,
    }
}

/// Mean of the paired cost ratios baseline/approximate over converging
/// runs; `NaN` when none converge.
pub fn performance_ratio(verdicts: &[TrajectoryVerdict], baselines: &[BaselineTrajectory]) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (v, b) in verdicts.iter().zip(baselines.iter()) {
        if let Some(cost) = v.cost {
            sum += b.cost / cost;
            count += 1;
        }
    }
    if count == 0 {
        f64::NAN
    } else {
        sum / count as f64
    }
}

/// Iteration counts of a warm-started to-accuracy scheme along the
/// baseline trajectories: at each visited state, iterate until
/// `||z_j - z*||^2 <= eps`, then carry the stopped iterate forward
/// through the update matrices. Returns total iterations and QP count.
#[allow(clippy::too_many_arguments)]
pub fn warm_start_iteration_counts(
    qp: &CondensedQp,
    factor: &KktFactor,
    d_z: &DMatrix<f64>,
    d_mu: &DMatrix<f64>,
    d_0: &DMatrix<f64>,
    baseline: &BaselineTrajectory,
    eps: f64,
    cap: usize,
) -> Result<(usize, usize)> {
    let mut total = 0usize;
    let mut warm = AdmmState::new(d_0 * &baseline.states[0], DVector::zeros(qp.dim()));
    for (x, reference) in baseline.states.iter().zip(baseline.references.iter()) {
        let kernel = AdmmKernel::new(factor, qp, x);
        let (count, stopped) = kernel.iterations_to_accuracy(&warm, &reference.z, eps, cap)?;
        total += count;
        warm = AdmmState::new(d_z * &stopped.z, d_mu * &stopped.mu);
    }
    Ok((total, baseline.states.len()))
}

/// Per-`M` benchmark metrics of one parametrization.
#[derive(Debug, Clone)]
pub struct BenchMetrics {
    pub m: usize,
    /// Slice-area ratio of the invariant region against the terminal set.
    pub vol: f64,
    /// Fraction of sampled starts whose run converges.
    pub cnvg: f64,
    /// Mean baseline/approximate cost ratio over converging runs.
    pub perf: f64,
    /// Fraction of runs without state-constraint violation.
    pub violation_free: f64,
}

/// One line of the sweep: a `(update, init, rho)` triple with metrics for
/// every iteration count and the warm-started iteration average.
#[derive(Debug, Clone)]
pub struct BenchRow {
    pub line: usize,
    pub update: UpdateRule,
    pub init: InitRule,
    pub rho: f64,
    pub metrics: Vec<BenchMetrics>,
    pub mstar: f64,
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub samples: usize,
    pub seed: u64,
    pub m_values: Vec<usize>,
    pub rho_values: Vec<f64>,
    /// Convergence horizon for the approximate runs.
    pub classify_horizon: usize,
    /// Step budget for the classical baselines.
    pub baseline_cap: usize,
    pub k_cap: usize,
    pub reference_tol: f64,
    pub mstar_eps: f64,
    pub mstar_cap: usize,
}

impl BenchConfig {
    pub fn new(samples: usize, seed: u64) -> Self {
        Self {
            samples,
            seed,
            m_values: vec![1, 5, 10],
            rho_values: vec![100.0, 10.0, 1.0],
            classify_horizon: 50,
            baseline_cap: 200,
            k_cap: DEFAULT_K_CAP,
            reference_tol: 1e-11,
            mstar_eps: 1e-4,
            mstar_cap: 1_000_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub m_values: Vec<usize>,
    pub samples: usize,
    pub terminal_area: f64,
    /// Largest terminal-set entry step over the baseline runs.
    pub baseline_max_entry: usize,
}

/// Run the full parameter sweep over update rules, initializations, and
/// penalty weights in table order: the update rule varies slowest, then
/// the initialization, then `rho`.
pub fn run_benchmark(problem: &MpcProblem, config: &BenchConfig) -> Result<BenchReport> {
    if problem.system.state_dim() != 2 {
        return Err(Error::Invalid(
            "the benchmark slices require a planar state".into(),
        ));
    }
    let qp = build_qp(
        &problem.system,
        &problem.state_box,
        &problem.input_box,
        &problem.spec,
    )?;
    let lqr = lqr_gain(&problem.system, &problem.spec)?;
    let tset = terminal_set(
        &problem.system,
        &lqr,
        &problem.state_box,
        &problem.input_box,
        config.k_cap,
    )?;
    let terminal_area = polygon_area(&slice_2d(
        &tset,
        &problem.state_box,
        &DMatrix::identity(2, 2),
    )?);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let samples = sample_feasible_states(&qp, &problem.state_box, config.samples, &mut rng)?;
    let baselines: Vec<BaselineTrajectory> = samples
        .par_iter()
        .map(|x0| {
            mpc_trajectory(
                &qp,
                &tset,
                &problem.spec,
                x0,
                config.baseline_cap,
                config.reference_tol,
            )
        })
        .collect::<Result<_>>()?;
    let baseline_max_entry = baselines.iter().map(|b| b.entry_step).max().unwrap_or(0);

    // (update, rho) pairs share the invariant region and cost data across
    // initializations; only D0 differs.
    let pairs: Vec<(UpdateRule, f64)> = UpdateRule::ALL
        .iter()
        .flat_map(|u| config.rho_values.iter().map(move |r| (*u, *r)))
        .collect();

    struct PairResult {
        update: UpdateRule,
        rho: f64,
        // per init: metrics per M, then mstar
        per_init: Vec<(InitRule, Vec<BenchMetrics>, f64)>,
    }

    let pair_results: Vec<PairResult> = pairs
        .par_iter()
        .map(|(update, rho)| -> Result<PairResult> {
            let factor = kkt_factor(&qp, *rho)?;
            let (d_z, d_mu) = update_matrices(*update, &problem.system, &lqr, problem.spec.horizon);

            // Invariant region, cost data, and model per iteration count.
            let mut per_m = Vec::new();
            for &m in &config.m_values {
                let model = build_augmented(
                    &qp,
                    &factor,
                    AdmmParams::new(*rho, m)?,
                    *update,
                    InitRule::Naive,
                    &problem.system,
                    &lqr,
                    &problem.spec,
                )?;
                let pstar = pstar_set(&model, &problem.state_box, config.k_cap)?;
                let ctg = cost_to_go(&model)?;
                per_m.push((m, model, pstar, ctg));
            }

            let mut per_init = Vec::new();
            for init in InitRule::ALL {
                let d_0 = init_matrix(init, &problem.system, &lqr, problem.spec.horizon);
                let q = qp.dim();
                let r = 2 + 2 * q;
                let mut w = DMatrix::zeros(r, 2);
                w.view_mut((0, 0), (2, 2))
                    .copy_from(&DMatrix::identity(2, 2));
                w.view_mut((2, 0), (q, 2)).copy_from(&d_0);

                let mut metrics = Vec::new();
                for (m, model, pstar, ctg) in &per_m {
                    let poly = slice_2d(pstar, &problem.state_box, &w)?;
                    let vol = polygon_area(&poly) / terminal_area;
                    let verdicts: Vec<TrajectoryVerdict> = samples
                        .iter()
                        .map(|x0| {
                            let mut x_aug = DVector::zeros(r);
                            x_aug.rows_mut(0, 2).copy_from(x0);
                            x_aug.rows_mut(2, q).copy_from(&(&d_0 * x0));
                            classify_trajectory(
                                model,
                                pstar,
                                ctg,
                                &problem.state_box,
                                x_aug,
                                config.classify_horizon,
                            )
                        })
                        .collect();
                    let cnvg = verdicts.iter().filter(|v| v.converged).count() as f64
                        / verdicts.len() as f64;
                    let perf = performance_ratio(&verdicts, &baselines);
                    let violation_free = verdicts.iter().filter(|v| v.violation_free).count()
                        as f64
                        / verdicts.len() as f64;
                    metrics.push(BenchMetrics {
                        m: *m,
                        vol,
                        cnvg,
                        perf,
                        violation_free,
                    });
                }

                let mut iter_total = 0usize;
                let mut qp_total = 0usize;
                for baseline in &baselines {
                    let (iters, qps) = warm_start_iteration_counts(
                        &qp,
                        &factor,
                        &d_z,
                        &d_mu,
                        &d_0,
                        baseline,
                        config.mstar_eps,
                        config.mstar_cap,
                    )?;
                    iter_total += iters;
                    qp_total += qps;
                }
                let mstar = iter_total as f64 / qp_total as f64;
                per_init.push((init, metrics, mstar));
            }
            Ok(PairResult {
                update: *update,
                rho: *rho,
                per_init,
            })
        })
        .collect::<Result<_>>()?;

    // Reassemble in table order: update slowest, then init, then rho.
    let mut rows = Vec::with_capacity(pairs.len() * InitRule::ALL.len());
    let mut line = 0usize;
    for update in UpdateRule::ALL {
        for init in InitRule::ALL {
            for rho in &config.rho_values {
                line += 1;
                let pair = pair_results
                    .iter()
                    .find(|p| p.update == update && p.rho == *rho)
                    .expect("pair result present by construction");
                let (_, metrics, mstar) = pair
                    .per_init
                    .iter()
                    .find(|(i, _, _)| *i == init)
                    .expect("init result present by construction");
                rows.push(BenchRow {
                    line,
                    update,
                    init,
                    rho: *rho,
                    metrics: metrics.clone(),
                    mstar: *mstar,
                });
            }
        }
    }

    Ok(BenchReport {
        rows,
        m_values: config.m_values.clone(),
        samples: config.samples,
        terminal_area,
        baseline_max_entry,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixture;

    fn model(rho: f64, iters: usize) -> AugmentedModel {
        let prob = fixture::double_integrator().unwrap();
        let qp = build_qp(&prob.system, &prob.state_box, &prob.input_box, &prob.spec).unwrap();
        let lqr = lqr_gain(&prob.system, &prob.spec).unwrap();
        let factor = kkt_factor(&qp, rho).unwrap();
        build_augmented(
            &qp,
            &factor,
            AdmmParams::new(rho, iters).unwrap(),
            UpdateRule::ShiftLqr,
            InitRule::Lqr,
            &prob.system,
            &lqr,
            &prob.spec,
        )
        .unwrap()
    }

    #[test]
    fn cost_to_go_matches_linear_rollout() {
        // Under the linear dynamics x+ = S_M x, the accumulated stage
        // costs x' Q_aug x must telescope to x0' P x0.
        let model = model(10.0, 5);
        let ctg = cost_to_go(&model).unwrap();
        let residual = &ctg.p_aug - (&ctg.q_aug + model.s_m.transpose() * &ctg.p_aug * &model.s_m);
        assert!(residual.norm() < 1e-8 * ctg.p_aug.norm());

        let mut x = DVector::from_fn(32, |i, _| ((i + 1) as f64 * 0.05).sin() * 0.01);
        let target = ctg.tail_cost(&x);
        let mut acc = 0.0;
        for _ in 0..5_000 {
            acc += quadratic_form(&ctg.q_aug, &x);
            x = &model.s_m * &x;
        }
        assert!(
            (acc - target).abs() < 1e-9 * target.abs().max(1.0),
            "rollout {acc} vs quadratic {target}"
        );
    }

    #[test]
    fn sampled_states_are_feasible_and_deterministic() {
        let prob = fixture::double_integrator().unwrap();
        let qp = build_qp(&prob.system, &prob.state_box, &prob.input_box, &prob.spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let a = sample_feasible_states(&qp, &prob.state_box, 20, &mut rng).unwrap();
        for x in &a {
            assert!(ocp_feasible(&qp, &prob.state_box, x));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let b = sample_feasible_states(&qp, &prob.state_box, 20, &mut rng).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn baseline_from_terminal_set_is_immediate() {
        let prob = fixture::double_integrator().unwrap();
        let qp = build_qp(&prob.system, &prob.state_box, &prob.input_box, &prob.spec).unwrap();
        let lqr = lqr_gain(&prob.system, &prob.spec).unwrap();
        let tset = terminal_set(
            &prob.system,
            &lqr,
            &prob.state_box,
            &prob.input_box,
            DEFAULT_K_CAP,
        )
        .unwrap();
        let x0 = DVector::from_vec(vec![0.1, 0.0]);
        assert!(tset.contains(&x0, 0.0));
        let traj = mpc_trajectory(&qp, &tset, &prob.spec, &x0, 200, 1e-11).unwrap();
        assert_eq!(traj.entry_step, 0);
        assert_eq!(traj.states.len(), 1);
        assert!((traj.cost - terminal_cost(&x0, &prob.spec)).abs() < 1e-12);
    }

    #[test]
    fn origin_classifies_as_converged_at_zero_cost() {
        let prob = fixture::double_integrator().unwrap();
        let model = model(10.0, 5);
        let pstar = pstar_set(&model, &prob.state_box, DEFAULT_K_CAP).unwrap();
        let ctg = cost_to_go(&model).unwrap();
        let verdict = classify_trajectory(
            &model,
            &pstar,
            &ctg,
            &prob.state_box,
            DVector::zeros(32),
            50,
        );
        assert!(verdict.converged);
        assert_eq!(verdict.entry_step, Some(0));
        assert!(verdict.cost.unwrap().abs() < 1e-12);
        assert!(verdict.violation_free);
    }
}
