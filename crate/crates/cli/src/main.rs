//! `rtadmm`: analyze real-time ADMM MPC parametrizations from the command
//! line. Subcommands cover closed-loop stability sweeps, invariant-set
//! computation, the benchmark table, single simulations, and the
//! warm-started iteration study.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use config::RunConfig;
use rtadmm_core::admm::{kkt_factor, AdmmParams};
use rtadmm_core::analysis::{
    mpc_trajectory, run_benchmark, warm_start_iteration_counts, BenchConfig,
};
use rtadmm_core::augmented::{
    build_augmented, init_matrix, simulate, update_matrices, AugmentedModel, InitRule, UpdateRule,
};
use rtadmm_core::mpc::{build_qp, lqr_gain, ocp_feasible, MpcProblem};
use rtadmm_core::numerics::{self, min_symmetric_eigenvalue};
use rtadmm_core::sets::{polygon_area, pstar_set, slice_2d, terminal_set, Polygon2D};

const EXIT_NEGATIVE: u8 = 1;
const EXIT_INVALID: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser)]
#[command(name = "rtadmm", about = "Real-time ADMM MPC analysis toolkit")]
struct Cli {
    /// Problem and grid definition (JSON).
    #[arg(long, global = true, default_value = "configs/double_integrator.json")]
    config: PathBuf,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Override the RNG seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the sample count from the config.
    #[arg(long, global = true)]
    samples: Option<usize>,
    /// Cap the worker thread count.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Schur stability and structural checks over the parameter grid.
    Stability(StabilityArgs),
    /// Terminal set, invariant-region slices, and the feasible-set grid.
    Sets,
    /// The full benchmark table.
    Bench,
    /// One approximate and one classical trajectory from a given state.
    Simulate(SimulateArgs),
    /// Warm-started iteration counts along classical trajectories.
    Mstar,
}

#[derive(Args)]
struct StabilityArgs {
    /// Replace the rule-based update with `D_z = SCALE * I`.
    #[arg(long, allow_negative_numbers = true)]
    dz_scale: Option<f64>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Initial state, comma-separated.
    #[arg(long, allow_hyphen_values = true)]
    x0: String,
    #[arg(long, default_value_t = 10.0)]
    rho: f64,
    #[arg(long, default_value_t = 5)]
    m: usize,
    #[arg(long, default_value = "shift-lqr")]
    update: String,
    #[arg(long, default_value = "lqr")]
    init: String,
}

/// 17 significant digits: exact round-trip for doubles.
fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_file(path: &Path, content: &str) -> Result<(), String> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| format!("cannot create {}: {e}", parent.display()))?;
    }
    std::fs::write(path, content).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), String> {
    let text = serde_json::to_string_pretty(value).map_err(|e| e.to_string())?;
    write_file(path, &text)
}

fn polygon_csv(poly: &Polygon2D) -> String {
    let mut out = String::from("x1,x2\n");
    for v in &poly.vertices {
        out.push_str(&format!("{},{}\n", fmt(v[0]), fmt(v[1])));
    }
    out
}

fn parse_vector(text: &str, dim: usize) -> Result<DVector<f64>, String> {
    let vals: Result<Vec<f64>, _> = text.split(',').map(|t| t.trim().parse::<f64>()).collect();
    let vals = vals.map_err(|e| format!("invalid state vector '{text}': {e}"))?;
    if vals.len() != dim {
        return Err(format!("expected {dim} components, got {}", vals.len()));
    }
    Ok(DVector::from_vec(vals))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: cannot configure thread pool: {e}");
            return ExitCode::from(EXIT_INVALID);
        }
    }
    let mut config = match RunConfig::load(&cli.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_INVALID);
        }
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(samples) = cli.samples {
        config.samples = samples;
    }
    let problem = match config.problem() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_INVALID);
        }
    };
    let result = match &cli.command {
        Command::Stability(args) => cmd_stability(&config, &problem, &cli.out, args),
        Command::Sets => cmd_sets(&config, &problem, &cli.out),
        Command::Bench => cmd_bench(&config, &problem, &cli.out),
        Command::Simulate(args) => cmd_simulate(&config, &problem, &cli.out, args),
        Command::Mstar => cmd_mstar(&config, &problem, &cli.out),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(CmdError::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_INVALID)
        }
        Err(CmdError::Numeric(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_NUMERIC)
        }
    }
}

enum CmdError {
    Invalid(String),
    Numeric(String),
}

impl From<rtadmm_core::Error> for CmdError {
    fn from(e: rtadmm_core::Error) -> Self {
        CmdError::Numeric(e.to_string())
    }
}

impl From<String> for CmdError {
    fn from(msg: String) -> Self {
        CmdError::Invalid(msg)
    }
}

type CmdResult = Result<u8, CmdError>;

#[derive(Serialize)]
struct StabilityEntry {
    update: String,
    rho: f64,
    m: usize,
    spectral_radius: f64,
    stable: bool,
    zero_eigenvalues: usize,
    zero_eigenvalue_bound: usize,
    e11_rank: usize,
    e11_rank_expected: usize,
    mu_block_min_eigenvalue: f64,
    observability_rank: usize,
    aug_dim: usize,
}

fn observability_rank(model: &AugmentedModel) -> Result<usize, rtadmm_core::Error> {
    let r = model.aug_dim();
    let w = model.c_m.nrows();
    let mut stacked = DMatrix::zeros(w * r, r);
    let mut block = model.c_m.clone();
    for k in 0..r {
        stacked.view_mut((k * w, 0), (w, r)).copy_from(&block);
        block = &block * &model.s_m;
    }
    numerics::numerical_rank(&stacked, Some(1e-9))
}

fn cmd_stability(
    config: &RunConfig,
    problem: &MpcProblem,
    out: &Path,
    args: &StabilityArgs,
) -> CmdResult {
    let qp = build_qp(
        &problem.system,
        &problem.state_box,
        &problem.input_box,
        &problem.spec,
    )?;
    let lqr = lqr_gain(&problem.system, &problem.spec)?;
    let n = problem.system.state_dim();
    let m_in = problem.system.input_dim();
    let big_n = problem.spec.horizon;
    let zero_bound = (2 * big_n - 1) * n + big_n * m_in;
    let updates = config.update_rules()?;
    let mut entries = Vec::new();
    let mut all_stable = true;
    for update in &updates {
        for &rho in &config.grid.rho {
            let factor = kkt_factor(&qp, rho)?;
            let e11_rank = numerics::numerical_rank(&factor.e11, Some(1e-9))?;
            let mu_block = DMatrix::identity(qp.dim(), qp.dim()) / rho - &factor.e11;
            let mu_min = min_symmetric_eigenvalue(&mu_block);
            for &m in &config.grid.m {
                let params = AdmmParams::new(rho, m)?;
                let model = match args.dz_scale {
                    None => build_augmented(
                        &qp,
                        &factor,
                        params,
                        *update,
                        InitRule::Naive,
                        &problem.system,
                        &lqr,
                        &problem.spec,
                    )?,
                    Some(scale) => {
                        let q = qp.dim();
                        let (_, d_mu) = update_matrices(*update, &problem.system, &lqr, big_n);
                        AugmentedModel::from_parts(
                            problem.system.clone(),
                            problem.spec.clone(),
                            qp.clone(),
                            factor.clone(),
                            params,
                            scale * DMatrix::identity(q, q),
                            d_mu,
                            DMatrix::zeros(q, n),
                        )?
                    }
                };
                let spectrum = numerics::eigenvalues(&model.s_m)?;
                let stable = spectrum.spectral_radius < 1.0;
                all_stable &= stable;
                let zero_count = spectrum
                    .eigenvalues
                    .iter()
                    .filter(|l| l.norm() <= 1e-7)
                    .count();
                let obs_rank = observability_rank(&model)?;
                println!(
                    "{:>10} rho={:<6} M={:<3} radius={:.6} stable={} zero-eigs={}/{} rank(E11)={}/{} min-eig(mu-block)={:.3e} obs-rank={}/{}",
                    update.as_str(),
                    rho,
                    m,
                    spectrum.spectral_radius,
                    stable,
                    zero_count,
                    zero_bound,
                    e11_rank,
                    big_n * m_in,
                    mu_min,
                    obs_rank,
                    model.aug_dim(),
                );
                entries.push(StabilityEntry {
                    update: update.as_str().into(),
                    rho,
                    m,
                    spectral_radius: spectrum.spectral_radius,
                    stable,
                    zero_eigenvalues: zero_count,
                    zero_eigenvalue_bound: zero_bound,
                    e11_rank,
                    e11_rank_expected: big_n * m_in,
                    mu_block_min_eigenvalue: mu_min,
                    observability_rank: obs_rank,
                    aug_dim: model.aug_dim(),
                });
            }
        }
    }
    write_json(&out.join("report.json"), &entries)?;
    Ok(if all_stable { 0 } else { EXIT_NEGATIVE })
}

fn cmd_sets(config: &RunConfig, problem: &MpcProblem, out: &Path) -> CmdResult {
    if problem.system.state_dim() != 2 {
        return Err(CmdError::Invalid(
            "set slices require a planar state".into(),
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
    let t_poly = slice_2d(&tset, &problem.state_box, &DMatrix::identity(2, 2))?;
    let t_area = polygon_area(&t_poly);
    write_file(&out.join("sets/terminal.csv"), &polygon_csv(&t_poly))?;

    // Feasible-set membership on a grid over the state box.
    let mut grid_csv = String::from("x1,x2,feasible\n");
    let (steps1, steps2) = (100usize, 40usize);
    for i in 0..=steps1 {
        for j in 0..=steps2 {
            let x = DVector::from_vec(vec![
                problem.state_box.lower[0]
                    + (problem.state_box.upper[0] - problem.state_box.lower[0]) * i as f64
                        / steps1 as f64,
                problem.state_box.lower[1]
                    + (problem.state_box.upper[1] - problem.state_box.lower[1]) * j as f64
                        / steps2 as f64,
            ]);
            let feasible = ocp_feasible(&qp, &problem.state_box, &x);
            grid_csv.push_str(&format!(
                "{},{},{}\n",
                fmt(x[0]),
                fmt(x[1]),
                u8::from(feasible)
            ));
        }
    }
    write_file(&out.join("sets/feasible_grid.csv"), &grid_csv)?;

    let mut summary = String::from("update,init,rho,m,k_bar,slice_area,terminal_area,ratio\n");
    for update in config.update_rules()? {
        for &rho in &config.grid.rho {
            let factor = kkt_factor(&qp, rho)?;
            for &m in &config.grid.m {
                let model = build_augmented(
                    &qp,
                    &factor,
                    AdmmParams::new(rho, m)?,
                    update,
                    InitRule::Naive,
                    &problem.system,
                    &lqr,
                    &problem.spec,
                )?;
                let pstar = pstar_set(&model, &problem.state_box, config.k_cap)?;
                for init in config.init_rules()? {
                    let d_0 = init_matrix(init, &problem.system, &lqr, problem.spec.horizon);
                    let q = qp.dim();
                    let mut w = DMatrix::zeros(2 + 2 * q, 2);
                    w.view_mut((0, 0), (2, 2))
                        .copy_from(&DMatrix::identity(2, 2));
                    w.view_mut((2, 0), (q, 2)).copy_from(&d_0);
                    let poly = slice_2d(&pstar, &problem.state_box, &w)?;
                    let area = polygon_area(&poly);
                    let name = format!(
                        "sets/slice_{}_{}_rho{}_M{}.csv",
                        update.as_str(),
                        init.as_str(),
                        rho,
                        m
                    );
                    write_file(&out.join(name), &polygon_csv(&poly))?;
                    summary.push_str(&format!(
                        "{},{},{},{},{},{},{},{}\n",
                        update.as_str(),
                        init.as_str(),
                        fmt(rho),
                        m,
                        pstar.k_bar,
                        fmt(area),
                        fmt(t_area),
                        fmt(area / t_area)
                    ));
                }
            }
        }
    }
    write_file(&out.join("sets/summary.csv"), &summary)?;
    Ok(0)
}

fn cmd_bench(config: &RunConfig, problem: &MpcProblem, out: &Path) -> CmdResult {
    let mut bench = BenchConfig::new(config.samples, config.seed);
    bench.m_values = config.grid.m.clone();
    bench.rho_values = config.grid.rho.clone();
    bench.classify_horizon = config.step_limit;
    bench.k_cap = config.k_cap;
    let report = run_benchmark(problem, &bench)?;

    let mut header = String::from("line,updates,init,rho");
    for m in &report.m_values {
        header.push_str(&format!(",vol_M{m},cnvg_M{m},perf_M{m},violfree_M{m}"));
    }
    header.push_str(",mstar\n");
    let mut csv = header;
    for row in &report.rows {
        let mut line = format!(
            "{},{},{},{}",
            row.line,
            row.update.as_str(),
            row.init.as_str(),
            fmt(row.rho)
        );
        for metric in &row.metrics {
            line.push_str(&format!(
                ",{},{},{},{}",
                fmt(metric.vol),
                fmt(metric.cnvg),
                fmt(metric.perf),
                fmt(metric.violation_free)
            ));
        }
        line.push_str(&format!(",{}\n", fmt(row.mstar)));
        csv.push_str(&line);
    }
    write_file(&out.join("results.csv"), &csv)?;

    #[derive(Serialize)]
    struct BenchSummary {
        samples: usize,
        seed: u64,
        m_values: Vec<usize>,
        terminal_area: f64,
        baseline_max_entry: usize,
    }
    write_json(
        &out.join("report.json"),
        &BenchSummary {
            samples: report.samples,
            seed: config.seed,
            m_values: report.m_values.clone(),
            terminal_area: report.terminal_area,
            baseline_max_entry: report.baseline_max_entry,
        },
    )?;
    Ok(0)
}

fn cmd_simulate(
    config: &RunConfig,
    problem: &MpcProblem,
    out: &Path,
    args: &SimulateArgs,
) -> CmdResult {
    let n = problem.system.state_dim();
    let x0 = parse_vector(&args.x0, n)?;
    let update = UpdateRule::parse(&args.update).map_err(|e| e.to_string())?;
    let init = InitRule::parse(&args.init).map_err(|e| e.to_string())?;
    let qp = build_qp(
        &problem.system,
        &problem.state_box,
        &problem.input_box,
        &problem.spec,
    )?;
    if !ocp_feasible(&qp, &problem.state_box, &x0) {
        eprintln!("initial state is infeasible for the optimal control problem");
        return Ok(EXIT_NEGATIVE);
    }
    let lqr = lqr_gain(&problem.system, &problem.spec)?;
    let factor = kkt_factor(&qp, args.rho)?;
    let model = build_augmented(
        &qp,
        &factor,
        AdmmParams::new(args.rho, args.m)?,
        update,
        init,
        &problem.system,
        &lqr,
        &problem.spec,
    )?;
    let pstar = pstar_set(&model, &problem.state_box, config.k_cap)?;
    let traj = simulate(
        &model,
        model.initial_state(&x0),
        config.step_limit,
        |x_aug| pstar.contains(x_aug, 1e-9),
    );

    let m_in = problem.system.input_dim();
    let mut admm_csv = String::from("k");
    for d in 0..n {
        admm_csv.push_str(&format!(",x{}", d + 1));
    }
    for d in 0..m_in {
        admm_csv.push_str(&format!(",u{}", d + 1));
    }
    admm_csv.push_str(",stage_cost,in_pstar\n");
    for (k, state) in traj.states.iter().enumerate() {
        let (x, _) = model.split(state);
        let mut line = format!("{k}");
        for d in 0..n {
            line.push_str(&format!(",{}", fmt(x[d])));
        }
        if k < traj.inputs.len() {
            for d in 0..m_in {
                line.push_str(&format!(",{}", fmt(traj.inputs[k][d])));
            }
            line.push_str(&format!(",{}", fmt(traj.stage_costs[k])));
        } else {
            for _ in 0..m_in {
                line.push(',');
            }
            line.push(',');
        }
        line.push_str(&format!(",{}\n", u8::from(pstar.contains(state, 1e-9))));
        admm_csv.push_str(&line);
    }
    write_file(&out.join("traj/admm.csv"), &admm_csv)?;

    let tset = terminal_set(
        &problem.system,
        &lqr,
        &problem.state_box,
        &problem.input_box,
        config.k_cap,
    )?;
    let baseline = mpc_trajectory(&qp, &tset, &problem.spec, &x0, 200, 1e-11)?;
    let mut mpc_csv = String::from("k");
    for d in 0..n {
        mpc_csv.push_str(&format!(",x{}", d + 1));
    }
    for d in 0..m_in {
        mpc_csv.push_str(&format!(",u{}", d + 1));
    }
    mpc_csv.push_str(",in_terminal\n");
    for (k, x) in baseline.states.iter().enumerate() {
        let mut line = format!("{k}");
        for d in 0..n {
            line.push_str(&format!(",{}", fmt(x[d])));
        }
        if k < baseline.inputs.len() {
            for d in 0..m_in {
                line.push_str(&format!(",{}", fmt(baseline.inputs[k][d])));
            }
        } else {
            for _ in 0..m_in {
                line.push(',');
            }
        }
        line.push_str(&format!(",{}\n", u8::from(tset.contains(x, 1e-9))));
        mpc_csv.push_str(&line);
    }
    write_file(&out.join("traj/mpc.csv"), &mpc_csv)?;

    #[derive(Serialize)]
    struct SimSummary {
        admm_steps: usize,
        admm_entered_invariant_region: bool,
        mpc_entry_step: usize,
        mpc_cost: f64,
    }
    write_json(
        &out.join("report.json"),
        &SimSummary {
            admm_steps: traj.states.len() - 1,
            admm_entered_invariant_region: pstar.contains(traj.states.last().unwrap(), 1e-9),
            mpc_entry_step: baseline.entry_step,
            mpc_cost: baseline.cost,
        },
    )?;
    Ok(0)
}

fn cmd_mstar(config: &RunConfig, problem: &MpcProblem, out: &Path) -> CmdResult {
    use rand::SeedableRng;
    use rayon::prelude::*;

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
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(config.seed);
    let samples = rtadmm_core::analysis::sample_feasible_states(
        &qp,
        &problem.state_box,
        config.samples,
        &mut rng,
    )?;
    let baselines: Vec<_> = samples
        .par_iter()
        .map(|x0| mpc_trajectory(&qp, &tset, &problem.spec, x0, 200, 1e-11))
        .collect::<Result<_, _>>()?;

    let mut csv = String::from("update,init,rho,mstar,qp_count\n");
    for update in config.update_rules()? {
        for init in config.init_rules()? {
            for &rho in &config.grid.rho {
                let factor = kkt_factor(&qp, rho)?;
                let (d_z, d_mu) =
                    update_matrices(update, &problem.system, &lqr, problem.spec.horizon);
                let d_0 = init_matrix(init, &problem.system, &lqr, problem.spec.horizon);
                let mut total = 0usize;
                let mut qps = 0usize;
                for baseline in &baselines {
                    let (iters, count) = warm_start_iteration_counts(
                        &qp, &factor, &d_z, &d_mu, &d_0, baseline, 1e-4, 1_000_000,
                    )?;
                    total += iters;
                    qps += count;
                }
                csv.push_str(&format!(
                    "{},{},{},{},{}\n",
                    update.as_str(),
                    init.as_str(),
                    fmt(rho),
                    fmt(total as f64 / qps as f64),
                    qps
                ));
            }
        }
    }
    write_file(&out.join("mstar.csv"), &csv)?;
    Ok(0)
}
