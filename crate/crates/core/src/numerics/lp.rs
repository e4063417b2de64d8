//! Dense two-phase simplex for small linear programs of the form
//!
//! ```text
//!     maximize   c' x
//!     subject to lo <= A x <= hi        (entries may be +-inf, lo == hi allowed)
//! ```
//!
//! with free variables. Problems here are tiny (a few hundred rows), so a
//! full-tableau method with Dantzig pricing and a Bland fallback for
//! degeneracy is deterministic and fast enough.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Two-sided row constraints `lower <= rows * x <= upper`.
#[derive(Debug, Clone)]
pub struct HalfspaceSystem {
    pub rows: DMatrix<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl HalfspaceSystem {
    pub fn new(rows: DMatrix<f64>, lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        if rows.nrows() != lower.len() || rows.nrows() != upper.len() {
            return Err(Error::Dimension(format!(
                "{} rows but {} lower / {} upper bounds",
                rows.nrows(),
                lower.len(),
                upper.len()
            )));
        }
        Ok(Self { rows, lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// True if `x` satisfies every row within absolute slack `tol`.
    pub fn satisfied_by(&self, x: &DVector<f64>, tol: f64) -> bool {
        let v = &self.rows * x;
        v.iter()
            .zip(self.lower.iter().zip(self.upper.iter()))
            .all(|(vi, (lo, hi))| *vi >= lo - tol && *vi <= hi + tol)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone)]
pub struct LpResult {
    pub status: LpStatus,
    /// Objective value, meaningful when `status == Optimal`.
    pub value: f64,
    /// Maximizer, meaningful when `status == Optimal`.
    pub argument: DVector<f64>,
}

const PIVOT_TOL: f64 = 1e-9;
const FEAS_TOL: f64 = 1e-9;

/// Maximize `objective' x` subject to `system`.
pub fn lp_maximize(objective: &DVector<f64>, system: &HalfspaceSystem) -> Result<LpResult> {
    if objective.len() != system.dim() {
        return Err(Error::Dimension(format!(
            "objective has {} entries, system has {} columns",
            objective.len(),
            system.dim()
        )));
    }
    Simplex::build(objective, system)?.solve()
}

/// Minimize `objective' x` subject to `system`.
pub fn lp_minimize(objective: &DVector<f64>, system: &HalfspaceSystem) -> Result<LpResult> {
    let mut res = lp_maximize(&(-objective), system)?;
    res.value = -res.value;
    Ok(res)
}

struct Simplex {
    /// Tableau rows over columns [x+ | x- | slacks | artificials | rhs].
    tab: Vec<Vec<f64>>,
    basis: Vec<usize>,
    n_orig: usize,
    n_struct: usize, // 2 * n_orig
    n_slack: usize,
    n_art: usize,
    obj: Vec<f64>,  // phase-2 reduced costs (minimize convention)
    obj1: Vec<f64>, // phase-1 reduced costs
    objective: DVector<f64>,
}

impl Simplex {
    fn build(objective: &DVector<f64>, system: &HalfspaceSystem) -> Result<Self> {
        let n = system.dim();
        // (coefficients, rhs, is_equality) with rhs >= 0 after sign fixing.
        let mut std_rows: Vec<(Vec<f64>, f64, bool)> = Vec::new();
        for i in 0..system.len() {
            let lo = system.lower[i];
            let hi = system.upper[i];
            if lo > hi {
                return Ok(Self::trivially_infeasible(objective, n));
            }
            let a: Vec<f64> = (0..n).map(|j| system.rows[(i, j)]).collect();
            let norm = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if norm == 0.0 {
                if lo > FEAS_TOL || hi < -FEAS_TOL {
                    return Ok(Self::trivially_infeasible(objective, n));
                }
                continue;
            }
            let scale = 1.0 / norm;
            let a: Vec<f64> = a.iter().map(|v| v * scale).collect();
            if (hi - lo).abs() < 1e-14 {
                std_rows.push((a, lo * scale, true));
            } else {
                if hi.is_finite() {
                    std_rows.push((a.clone(), hi * scale, false));
                }
                if lo.is_finite() {
                    std_rows.push((a.iter().map(|v| -v).collect(), -lo * scale, false));
                }
            }
        }

        let m = std_rows.len();
        let n_struct = 2 * n;
        let n_slack = std_rows.iter().filter(|r| !r.2).count();
        // Rows whose slack cannot serve as the initial basic column need an
        // artificial: equalities and inequalities with negative rhs.
        let mut n_art = 0;
        let mut tab = Vec::with_capacity(m);
        let mut basis = Vec::with_capacity(m);
        let total = n_struct + n_slack + {
            // first pass to count artificials
            let mut cnt = 0;
            for (_, b, eq) in &std_rows {
                if *eq || *b < 0.0 {
                    cnt += 1;
                }
            }
            cnt
        };
        let width = total + 1;
        let mut slack_idx = 0usize;
        let mut art_idx = 0usize;
        for (a, b, eq) in &std_rows {
            let mut row = vec![0.0; width];
            let flip = *b < 0.0;
            let sgn = if flip { -1.0 } else { 1.0 };
            for (j, v) in a.iter().enumerate() {
                row[j] = sgn * v;
                row[n + j] = -sgn * v;
            }
            row[width - 1] = sgn * b;
            if !*eq {
                row[n_struct + slack_idx] = sgn;
            }
            if *eq || flip {
                row[n_struct + n_slack + art_idx] = 1.0;
                basis.push(n_struct + n_slack + art_idx);
                art_idx += 1;
                n_art += 1;
            } else {
                basis.push(n_struct + slack_idx);
            }
            if !*eq {
                slack_idx += 1;
            }
            tab.push(row);
        }
        debug_assert_eq!(n_art, art_idx);
        debug_assert_eq!(total, n_struct + n_slack + n_art);

        // Phase-2 cost row: minimize -c'x.
        let mut obj = vec![0.0; width];
        for j in 0..n {
            obj[j] = -objective[j];
            obj[n + j] = objective[j];
        }
        // Phase-1 cost row: minimize sum of artificials.
        let mut obj1 = vec![0.0; width];
        for j in 0..n_art {
            obj1[n_struct + n_slack + j] = 1.0;
        }
        let mut s = Simplex {
            tab,
            basis,
            n_orig: n,
            n_struct,
            n_slack,
            n_art,
            obj,
            obj1,
            objective: objective.clone(),
        };
        // Eliminate initial basic columns from both cost rows.
        for i in 0..s.tab.len() {
            let b = s.basis[i];
            let c1 = s.obj1[b];
            if c1 != 0.0 {
                for j in 0..width {
                    s.obj1[j] -= c1 * s.tab[i][j];
                }
            }
            let c2 = s.obj[b];
            if c2 != 0.0 {
                for j in 0..width {
                    s.obj[j] -= c2 * s.tab[i][j];
                }
            }
        }
        Ok(s)
    }

    fn trivially_infeasible(objective: &DVector<f64>, n: usize) -> Self {
        Simplex {
            tab: Vec::new(),
            basis: Vec::new(),
            n_orig: n,
            n_struct: 2 * n,
            n_slack: 0,
            n_art: 1, // forces the infeasible branch in solve()
            obj: vec![0.0; 2 * n + 1],
            obj1: vec![f64::INFINITY; 2 * n + 1],
            objective: objective.clone(),
        }
    }

    fn width(&self) -> usize {
        self.n_struct + self.n_slack + self.n_art + 1
    }

    fn rhs(&self, i: usize) -> f64 {
        let w = self.width();
        self.tab[i][w - 1]
    }

    /// Run the simplex on the given cost row. `allow_art` permits artificial
    /// columns to enter (never, in practice). Returns Ok(true) if optimal,
    /// Ok(false) if unbounded.
    fn iterate(&mut self, phase_one: bool) -> Result<bool> {
        let width = self.width();
        let ncols = width - 1;
        let art_start = self.n_struct + self.n_slack;
        let cap = 20_000 + 50 * (self.tab.len() + ncols);
        let mut degenerate_streak = 0usize;
        let mut bland = false;
        for _ in 0..cap {
            let cost = if phase_one { &self.obj1 } else { &self.obj };
            // Entering column.
            let mut enter = None;
            if bland {
                for (j, &c) in cost.iter().enumerate().take(ncols) {
                    if j >= art_start && !phase_one {
                        continue;
                    }
                    if c < -PIVOT_TOL && !self.in_basis(j) {
                        enter = Some(j);
                        break;
                    }
                }
            } else {
                let mut best = -PIVOT_TOL;
                for (j, &c) in cost.iter().enumerate().take(ncols) {
                    if j >= art_start && !phase_one {
                        continue;
                    }
                    if c < best && !self.in_basis(j) {
                        best = c;
                        enter = Some(j);
                    }
                }
            }
            let Some(enter) = enter else {
                return Ok(true);
            };
            // Ratio test.
            let mut leave: Option<usize> = None;
            let mut best_ratio = f64::INFINITY;
            for i in 0..self.tab.len() {
                let aij = self.tab[i][enter];
                if aij > PIVOT_TOL {
                    let ratio = self.rhs(i).max(0.0) / aij;
                    let better = match leave {
                        None => true,
                        Some(l) => {
                            ratio < best_ratio - 1e-12
                                || (ratio < best_ratio + 1e-12 && self.basis[i] < self.basis[l])
                        }
                    };
                    if better {
                        best_ratio = ratio;
                        leave = Some(i);
                    }
                }
            }
            let Some(leave) = leave else {
                return Ok(false); // unbounded
            };
            if best_ratio < 1e-12 {
                degenerate_streak += 1;
                if degenerate_streak > 50 {
                    bland = true;
                }
            } else {
                degenerate_streak = 0;
            }
            self.pivot(leave, enter);
        }
        Err(Error::IterationCap("simplex"))
    }

    fn in_basis(&self, j: usize) -> bool {
        self.basis.contains(&j)
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let width = self.width();
        let piv = self.tab[row][col];
        let inv = 1.0 / piv;
        for j in 0..width {
            self.tab[row][j] *= inv;
        }
        for i in 0..self.tab.len() {
            if i == row {
                continue;
            }
            let f = self.tab[i][col];
            if f != 0.0 {
                for j in 0..width {
                    self.tab[i][j] -= f * self.tab[row][j];
                }
                self.tab[i][col] = 0.0;
            }
        }
        for cost in [&mut self.obj1, &mut self.obj] {
            let f = cost[col];
            if f != 0.0 {
                for (c, &t) in cost.iter_mut().zip(&self.tab[row]).take(width) {
                    *c -= f * t;
                }
                cost[col] = 0.0;
            }
        }
        self.basis[row] = col;
    }

    fn solve(mut self) -> Result<LpResult> {
        let n = self.n_orig;
        let empty = DVector::zeros(n);
        if self.tab.is_empty() && self.n_art > 0 {
            return Ok(LpResult {
                status: LpStatus::Infeasible,
                value: f64::NAN,
                argument: empty,
            });
        }
        if self.n_art > 0 {
            if !self.iterate(true)? {
                // Phase 1 is bounded below by zero; unbounded cannot happen.
                return Err(Error::Invalid("phase-1 simplex reported unbounded".into()));
            }
            let width = self.width();
            let phase1_value = -self.obj1[width - 1];
            if phase1_value > FEAS_TOL {
                return Ok(LpResult {
                    status: LpStatus::Infeasible,
                    value: f64::NAN,
                    argument: empty,
                });
            }
            // Drive leftover artificials out of the basis where possible.
            let art_start = self.n_struct + self.n_slack;
            for i in 0..self.tab.len() {
                if self.basis[i] >= art_start {
                    if let Some(col) = (0..art_start)
                        .find(|&j| self.tab[i][j].abs() > PIVOT_TOL && !self.in_basis(j))
                    {
                        self.pivot(i, col);
                    }
                }
            }
        }
        if !self.iterate(false)? {
            return Ok(LpResult {
                status: LpStatus::Unbounded,
                value: f64::INFINITY,
                argument: empty,
            });
        }
        let mut x = DVector::zeros(n);
        for (i, &b) in self.basis.iter().enumerate() {
            let v = self.rhs(i);
            if b < n {
                x[b] += v;
            } else if b < 2 * n {
                x[b - n] -= v;
            }
        }
        let value = self.objective.dot(&x);
        Ok(LpResult {
            status: LpStatus::Optimal,
            value,
            argument: x,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_box_2d() -> HalfspaceSystem {
        HalfspaceSystem::new(
            DMatrix::identity(2, 2),
            DVector::from_vec(vec![-1.0, -1.0]),
            DVector::from_vec(vec![1.0, 1.0]),
        )
        .unwrap()
    }

    #[test]
    fn maximize_over_unit_box() {
        let res = lp_maximize(&DVector::from_vec(vec![1.0, 0.0]), &unit_box_2d()).unwrap();
        assert_eq!(res.status, LpStatus::Optimal);
        assert!((res.value - 1.0).abs() < 1e-9);
        assert!((res.argument[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn inconsistent_bounds_are_infeasible() {
        let sys = HalfspaceSystem::new(
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DVector::from_vec(vec![1.0]),
            DVector::from_vec(vec![0.0]),
        )
        .unwrap();
        let res = lp_maximize(&DVector::from_vec(vec![1.0, 0.0]), &sys).unwrap();
        assert_eq!(res.status, LpStatus::Infeasible);
    }

    #[test]
    fn missing_bound_is_unbounded() {
        let sys = HalfspaceSystem::new(
            DMatrix::from_row_slice(1, 2, &[0.0, 1.0]),
            DVector::from_vec(vec![0.0]),
            DVector::from_vec(vec![1.0]),
        )
        .unwrap();
        let res = lp_maximize(&DVector::from_vec(vec![1.0, 0.0]), &sys).unwrap();
        assert_eq!(res.status, LpStatus::Unbounded);
    }

    #[test]
    fn equality_rows_are_respected() {
        // max x1 + x2 s.t. x1 + x2 = 1, 0 <= x1 <= 2, -3 <= x2 <= 0.25
        let sys = HalfspaceSystem::new(
            DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 1.0, 0.0, 0.0, 1.0]),
            DVector::from_vec(vec![1.0, 0.0, -3.0]),
            DVector::from_vec(vec![1.0, 2.0, 0.25]),
        )
        .unwrap();
        let res = lp_maximize(&DVector::from_vec(vec![0.0, 1.0]), &sys).unwrap();
        assert_eq!(res.status, LpStatus::Optimal);
        assert!((res.value - 0.25).abs() < 1e-8);
        assert!((res.argument[0] - 0.75).abs() < 1e-8);
    }

    #[test]
    fn general_polytope_optimum() {
        // max 3x + 2y over x >= 0, y >= 0, x + y <= 4, x + 3y <= 6 -> (4, 0).
        let sys = HalfspaceSystem::new(
            DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 3.0]),
            DVector::from_vec(vec![0.0, 0.0, f64::NEG_INFINITY, f64::NEG_INFINITY]),
            DVector::from_vec(vec![f64::INFINITY, f64::INFINITY, 4.0, 6.0]),
        )
        .unwrap();
        let res = lp_maximize(&DVector::from_vec(vec![3.0, 2.0]), &sys).unwrap();
        assert_eq!(res.status, LpStatus::Optimal);
        assert!((res.value - 12.0).abs() < 1e-8);
    }

    #[test]
    fn shifted_equality_needs_phase_one() {
        // x1 + x2 = 3 with box [0, 2]^2; max x1 -> 2.
        let sys = HalfspaceSystem::new(
            DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 1.0, 0.0, 0.0, 1.0]),
            DVector::from_vec(vec![3.0, 0.0, 0.0]),
            DVector::from_vec(vec![3.0, 2.0, 2.0]),
        )
        .unwrap();
        let res = lp_maximize(&DVector::from_vec(vec![1.0, 0.0]), &sys).unwrap();
        assert_eq!(res.status, LpStatus::Optimal);
        assert!((res.value - 2.0).abs() < 1e-8);
    }
}
