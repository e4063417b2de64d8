//! Maximal output admissible sets, the terminal set of the classical MPC
//! law, the invariant region of the augmented closed loop, and polytope
//! utilities (membership, 2-D slices, interior sampling).
//!
//! For a Schur stable `S` and output map `C`, the maximal output
//! admissible set is `{x : lo <= C S^k x <= hi for all k >= 0}`. It is
//! finitely determined: layers `C S^k` are accumulated until every row of
//! the next layer is redundant with respect to the collected ones.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::augmented::AugmentedModel;
use crate::error::{Error, Result};
use crate::mpc::{BoxSet, LinearSystem, LqrSolution};
use crate::numerics::{lp_maximize, lp_minimize, HalfspaceSystem, LpStatus};

/// Redundancy certification slack for the determination test.
const REDUNDANCY_SLACK: f64 = 1e-9;
/// Rows equal up to this tolerance are deduplicated.
const DUP_TOL: f64 = 1e-12;

/// Data of a maximal output admissible set computation.
#[derive(Debug, Clone)]
pub struct OutputAdmissibleSpec {
    pub s: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    /// Layer budget; exceeding it yields `Error::NotDetermined`.
    pub k_cap: usize,
}

pub const DEFAULT_K_CAP: usize = 500;

impl OutputAdmissibleSpec {
    pub fn new(
        s: DMatrix<f64>,
        c: DMatrix<f64>,
        lower: DVector<f64>,
        upper: DVector<f64>,
        k_cap: usize,
    ) -> Result<Self> {
        let d = s.nrows();
        if s.ncols() != d {
            return Err(Error::NotSquare(s.nrows(), s.ncols()));
        }
        if c.ncols() != d {
            return Err(Error::Dimension("output map does not match S".into()));
        }
        if lower.len() != c.nrows() || upper.len() != c.nrows() {
            return Err(Error::Dimension("output bounds do not match C".into()));
        }
        if !lower
            .iter()
            .zip(upper.iter())
            .all(|(l, u)| *l < 0.0 && 0.0 < *u)
        {
            return Err(Error::Invalid(
                "output bounds must contain the origin strictly".into(),
            ));
        }
        Ok(Self {
            s,
            c,
            lower,
            upper,
            k_cap,
        })
    }
}

/// A finitely determined admissible set: all layers `C S^k`, `k = 0..=k_bar`,
/// as one halfspace system.
#[derive(Debug, Clone)]
pub struct AdmissibleSet {
    pub halfspaces: HalfspaceSystem,
    pub k_bar: usize,
}

impl AdmissibleSet {
    pub fn dim(&self) -> usize {
        self.halfspaces.dim()
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        self.halfspaces.satisfied_by(x, tol)
    }
}

/// Per-coordinate bounds of a polytope, used to prescreen redundancy
/// checks without an LP per row.
struct CoordinateBounds {
    lower: DVector<f64>,
    upper: DVector<f64>,
}

impl CoordinateBounds {
    /// Solve the support LPs per coordinate; `None` if the polytope is
    /// unbounded in some coordinate direction. For an origin-symmetric
    /// polytope the lower bounds are mirrored without further LPs.
    fn compute(system: &HalfspaceSystem, symmetric: bool) -> Option<Self> {
        let d = system.dim();
        let mut lower = DVector::zeros(d);
        let mut upper = DVector::zeros(d);
        for i in 0..d {
            let mut e = DVector::zeros(d);
            e[i] = 1.0;
            let hi = lp_maximize(&e, system).ok()?;
            if hi.status != LpStatus::Optimal {
                return None;
            }
            upper[i] = hi.value;
            if symmetric {
                lower[i] = -hi.value;
            } else {
                let lo = lp_minimize(&e, system).ok()?;
                if lo.status != LpStatus::Optimal {
                    return None;
                }
                lower[i] = lo.value;
            }
        }
        Some(Self { lower, upper })
    }

    /// Interval-arithmetic range of `a'x` over the bounding box.
    fn range(&self, a: &DVector<f64>) -> (f64, f64) {
        let mut lo = 0.0;
        let mut hi = 0.0;
        for i in 0..a.len() {
            let c = a[i];
            if c >= 0.0 {
                lo += c * self.lower[i];
                hi += c * self.upper[i];
            } else {
                lo += c * self.upper[i];
                hi += c * self.lower[i];
            }
        }
        (lo, hi)
    }
}

fn is_duplicate(
    a: &DVector<f64>,
    lo: f64,
    hi: f64,
    rows: &DMatrix<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
) -> bool {
    let scale = a.amax().max(1.0);
    'outer: for r in 0..rows.nrows() {
        for c in 0..rows.ncols() {
            if (rows[(r, c)] - a[c]).abs() > DUP_TOL * scale {
                continue 'outer;
            }
        }
        if upper[r] <= hi + DUP_TOL && lower[r] >= lo - DUP_TOL {
            return true;
        }
    }
    false
}

/// Compute the maximal output admissible set by layer accumulation.
///
/// Stored halfspaces keep every layer `0..=k_bar`; the LP subproblems run
/// against the irredundant subset only, with an interval prescreen once
/// the accumulated polytope is bounded.
pub fn max_admissible_set(spec: &OutputAdmissibleSpec) -> Result<AdmissibleSet> {
    let d = spec.s.nrows();
    let w = spec.c.nrows();

    // Stored layers (the full description) and the active LP subset.
    let mut stored_rows: Vec<DVector<f64>> = Vec::new();
    let mut stored_lower: Vec<f64> = Vec::new();
    let mut stored_upper: Vec<f64> = Vec::new();
    let mut active_rows: Vec<DVector<f64>> = Vec::new();
    let mut active_lower: Vec<f64> = Vec::new();
    let mut active_upper: Vec<f64> = Vec::new();

    let assemble = |rows: &[DVector<f64>], lo: &[f64], hi: &[f64]| -> Result<HalfspaceSystem> {
        let mat = DMatrix::from_fn(rows.len(), d, |r, c| rows[r][c]);
        HalfspaceSystem::new(
            mat,
            DVector::from_column_slice(lo),
            DVector::from_column_slice(hi),
        )
    };

    // Layer 0.
    let mut layer = spec.c.clone();
    for r in 0..w {
        let row = layer.row(r).transpose();
        stored_rows.push(row.clone());
        stored_lower.push(spec.lower[r]);
        stored_upper.push(spec.upper[r]);
        if !is_duplicate(
            &row,
            spec.lower[r],
            spec.upper[r],
            &DMatrix::from_fn(active_rows.len(), d, |i, j| active_rows[i][j]),
            &DVector::from_column_slice(&active_lower),
            &DVector::from_column_slice(&active_upper),
        ) {
            active_rows.push(row);
            active_lower.push(spec.lower[r]);
            active_upper.push(spec.upper[r]);
        }
    }

    // An origin-symmetric box stays symmetric under layer accumulation,
    // which lets every minimization LP reuse its maximization twin.
    let symmetric = spec
        .lower
        .iter()
        .zip(spec.upper.iter())
        .all(|(l, u)| (l + u).abs() <= 1e-15 * u.abs().max(1.0));

    let mut k_bar = 0usize;
    loop {
        let active = assemble(&active_rows, &active_lower, &active_upper)?;
        // Recomputed per layer: the box shrinks as layers accumulate,
        // letting the interval prescreen certify decayed rows early.
        let coord_bounds = CoordinateBounds::compute(&active, symmetric);
        let next_layer = &layer * &spec.s;
        let active_lo_vec = DVector::from_column_slice(&active_lower);
        let active_hi_vec = DVector::from_column_slice(&active_upper);

        let mut fresh_rows = Vec::new();
        let mut fresh_lower = Vec::new();
        let mut fresh_upper = Vec::new();
        for r in 0..w {
            let row = next_layer.row(r).transpose();
            let (lo, hi) = (spec.lower[r], spec.upper[r]);
            if row.amax() < DUP_TOL {
                continue; // 0 in (lo, hi) always
            }
            if is_duplicate(&row, lo, hi, &active.rows, &active_lo_vec, &active_hi_vec) {
                continue;
            }
            if let Some(b) = &coord_bounds {
                let (rlo, rhi) = b.range(&row);
                if rhi <= hi && rlo >= lo {
                    continue;
                }
            }
            let max = lp_maximize(&row, &active)?;
            let mut redundant =
                max.status == LpStatus::Optimal && max.value <= hi + REDUNDANCY_SLACK;
            if redundant {
                if symmetric {
                    redundant = -max.value >= lo - REDUNDANCY_SLACK;
                } else {
                    let min = lp_minimize(&row, &active)?;
                    redundant =
                        min.status == LpStatus::Optimal && min.value >= lo - REDUNDANCY_SLACK;
                }
            }
            if !redundant {
                fresh_rows.push(row);
                fresh_lower.push(lo);
                fresh_upper.push(hi);
            }
        }

        if fresh_rows.is_empty() {
            let halfspaces = assemble(&stored_rows, &stored_lower, &stored_upper)?;
            return Ok(AdmissibleSet { halfspaces, k_bar });
        }
        if k_bar + 1 > spec.k_cap {
            return Err(Error::NotDetermined(spec.k_cap));
        }
        // Store the whole new layer; extend the LP subset with the rows
        // not certified redundant.
        for r in 0..w {
            stored_rows.push(next_layer.row(r).transpose());
            stored_lower.push(spec.lower[r]);
            stored_upper.push(spec.upper[r]);
        }
        active_rows.extend(fresh_rows);
        active_lower.extend(fresh_lower);
        active_upper.extend(fresh_upper);
        layer = next_layer;
        k_bar += 1;
    }
}

/// Terminal set of the classical MPC law: the maximal admissible set of
/// the LQR closed loop under state and input boxes.
pub fn terminal_set(
    system: &LinearSystem,
    lqr: &LqrSolution,
    state_box: &BoxSet,
    input_box: &BoxSet,
    k_cap: usize,
) -> Result<AdmissibleSet> {
    let n = system.state_dim();
    let m = system.input_dim();
    let mut c = DMatrix::zeros(n + m, n);
    c.view_mut((0, 0), (n, n))
        .copy_from(&DMatrix::identity(n, n));
    c.view_mut((n, 0), (m, n)).copy_from(&lqr.gain);
    let mut lower = DVector::zeros(n + m);
    let mut upper = DVector::zeros(n + m);
    lower.rows_mut(0, n).copy_from(&state_box.lower);
    upper.rows_mut(0, n).copy_from(&state_box.upper);
    lower.rows_mut(n, m).copy_from(&input_box.lower);
    upper.rows_mut(n, m).copy_from(&input_box.upper);
    let spec = OutputAdmissibleSpec::new(lqr.closed_loop.clone(), c, lower, upper, k_cap)?;
    max_admissible_set(&spec)
}

/// Invariant region of the augmented closed loop: the maximal admissible
/// set of `S_M` under the stacked output map `C_M`, whose rows must stay
/// in `X`, the `z` bounds, and (per iteration) the `z` bounds again.
pub fn pstar_set(
    model: &AugmentedModel,
    state_box: &BoxSet,
    k_cap: usize,
) -> Result<AdmissibleSet> {
    let n = model.state_dim();
    let q = model.z_dim();
    let iters = model.params.iterations;
    let w = n + q + iters * q;
    let mut lower = DVector::zeros(w);
    let mut upper = DVector::zeros(w);
    lower.rows_mut(0, n).copy_from(&state_box.lower);
    upper.rows_mut(0, n).copy_from(&state_box.upper);
    for j in 0..=iters {
        lower
            .rows_mut(n + j * q, q)
            .copy_from(&model.qp.bounds.lower);
        upper
            .rows_mut(n + j * q, q)
            .copy_from(&model.qp.bounds.upper);
    }
    let spec =
        OutputAdmissibleSpec::new(model.s_m.clone(), model.c_m.clone(), lower, upper, k_cap)?;
    max_admissible_set(&spec)
}

/// Draw a point in the interior of the set: pick a random direction and
/// scale it to a uniform fraction of the distance to the boundary.
/// Requires the origin strictly inside (true for all sets built here).
pub fn sample_point<R: Rng + ?Sized>(set: &AdmissibleSet, rng: &mut R) -> DVector<f64> {
    let d = set.dim();
    let mut dir = DVector::zeros(d);
    loop {
        for i in 0..d {
            // Box-Muller normal variate.
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            dir[i] = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
        }
        if dir.norm() > 1e-9 {
            break;
        }
    }
    dir /= dir.norm();
    let rows = &set.halfspaces.rows;
    let mut t_max = f64::INFINITY;
    for r in 0..rows.nrows() {
        let a_dot = rows.row(r).transpose().dot(&dir);
        if a_dot > 1e-14 {
            t_max = t_max.min(set.halfspaces.upper[r] / a_dot);
        } else if a_dot < -1e-14 {
            t_max = t_max.min(set.halfspaces.lower[r] / a_dot);
        }
    }
    if !t_max.is_finite() {
        t_max = 1.0;
    }
    let u: f64 = rng.gen_range(0.0..1.0);
    dir * (0.999 * u * t_max)
}

/// A planar polygon with ordered vertices.
#[derive(Debug, Clone)]
pub struct Polygon2D {
    pub vertices: Vec<[f64; 2]>,
}

impl Polygon2D {
    pub fn is_empty(&self) -> bool {
        self.vertices.len() < 3
    }
}

/// Shoelace area (orientation-independent).
pub fn polygon_area(poly: &Polygon2D) -> f64 {
    if poly.is_empty() {
        return 0.0;
    }
    let v = &poly.vertices;
    let mut twice = 0.0;
    for i in 0..v.len() {
        let j = (i + 1) % v.len();
        twice += v[i][0] * v[j][1] - v[j][0] * v[i][1];
    }
    (twice / 2.0).abs()
}

/// Clip a polygon by the halfspace `a'y <= b` (Sutherland-Hodgman step).
fn clip(poly: Polygon2D, a: [f64; 2], b: f64) -> Polygon2D {
    let v = poly.vertices;
    if v.len() < 3 {
        return Polygon2D { vertices: v };
    }
    let eval = |p: &[f64; 2]| a[0] * p[0] + a[1] * p[1] - b;
    let mut out = Vec::new();
    for i in 0..v.len() {
        let cur = v[i];
        let next = v[(i + 1) % v.len()];
        let fc = eval(&cur);
        let fn_ = eval(&next);
        if fc <= 0.0 {
            out.push(cur);
        }
        if (fc < 0.0 && fn_ > 0.0) || (fc > 0.0 && fn_ < 0.0) {
            let t = fc / (fc - fn_);
            out.push([
                cur[0] + t * (next[0] - cur[0]),
                cur[1] + t * (next[1] - cur[1]),
            ]);
        }
    }
    Polygon2D { vertices: out }
}

/// Slice an admissible set along the affine plane `x = W y`, `y` planar,
/// starting from a bounding seed box in the `y` coordinates. Used to
/// reduce the invariant region to the state plane via `W = [I; D0; 0]`.
pub fn slice_2d(set: &AdmissibleSet, seed: &BoxSet, w: &DMatrix<f64>) -> Result<Polygon2D> {
    if seed.dim() != 2 || w.ncols() != 2 {
        return Err(Error::Dimension("slices are two-dimensional only".into()));
    }
    if w.nrows() != set.dim() {
        return Err(Error::Dimension("slice map does not match the set".into()));
    }
    let (lo, hi) = (&seed.lower, &seed.upper);
    let mut poly = Polygon2D {
        vertices: vec![
            [lo[0], lo[1]],
            [hi[0], lo[1]],
            [hi[0], hi[1]],
            [lo[0], hi[1]],
        ],
    };
    let rows = &set.halfspaces.rows;
    for r in 0..rows.nrows() {
        let a_full = rows.row(r).transpose();
        let a = (w.transpose() * &a_full).column(0).into_owned();
        let a2 = [a[0], a[1]];
        poly = clip(poly, a2, set.halfspaces.upper[r]);
        poly = clip(poly, [-a2[0], -a2[1]], -set.halfspaces.lower[r]);
        if poly.is_empty() {
            break;
        }
    }
    Ok(poly)
}

/// Map `x = W y` for slice helpers.
pub fn lift_planar(w: &DMatrix<f64>, y: [f64; 2]) -> DVector<f64> {
    w * DVector::from_vec(vec![y[0], y[1]])
}
