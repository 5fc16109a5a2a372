//! Exact solver for support-budgeted, pointwise-separable integral problems.
//!
//! The problem: minimize `sum_i w_i g(x_i, u_i)` over grid functions `u`
//! whose support measure `||u||_0` stays within a budget `tau`. Because the
//! objective separates over cells, the gain of activating cell `i` is
//! governed by the nonpositive gap
//!
//! ```text
//! tilde_v(x) = inf_v g(x, v) - g(x, 0)
//! ```
//!
//! and an optimal control activates the cells with the most negative gaps,
//! placing the pointwise minimizer there and an exact zero elsewhere. The
//! boundary between active and inactive cells is a threshold `s <= 0` on
//! `tilde_v`; `lambda = -s` acts as a multiplier for the budget constraint.
//!
//! Cells are atoms, so the budget generally cannot be met exactly. The
//! selection rule here is the threshold rule: walk cells in ascending
//! `tilde_v` order and keep selecting while the cumulative measure fits the
//! budget, skipping nothing and stopping at the first cell that does not
//! fit. Zero-gap cells are never selected. This always produces a support
//! sandwiched between the strict and weak sublevel sets of `tilde_v`, and it
//! attains the global discrete optimum whenever all cell weights are equal
//! (the grids produced by this crate). With heterogeneous weights the budget
//! problem becomes a knapsack, where no threshold rule can be exact;
//! [`brute_force_l0`] provides the certified optimum for small instances.

use std::sync::Arc;

use crate::exec;
use crate::grid::{same_grid, Grid, GridFunction, Indicator};
use crate::{Error, Result};

/// Relative slack used when comparing a cumulative measure to the budget, so
/// that summation order cannot flip a boundary decision.
fn fits_budget(measure: f64, tau: f64) -> bool {
    measure <= tau + 1e-12 * (1.0 + tau.abs())
}

/// A family of scalar functions `g(x_i, u)`, one per grid cell.
///
/// `evaluate` may return `+inf` away from `u = 0` (box constraints and the
/// like), but must be finite at `u = 0`, and `pointwise_min` must return a
/// finite minimizer and minimum value for every cell.
pub trait SeparableIntegrand: Send + Sync {
    /// Value `g(x_cell, u)`.
    fn evaluate(&self, cell: usize, u: f64) -> f64;

    /// `(argmin_u g(x_cell, u), min_u g(x_cell, u))`.
    fn pointwise_min(&self, cell: usize) -> (f64, f64);
}

/// Per-cell quadratic `g(x, u) = a(x) u + (q/2) (u - c(x))^2`.
#[derive(Debug, Clone)]
pub struct QuadraticIntegrand {
    a: Option<Vec<f64>>,
    c: Vec<f64>,
    q: f64,
}

impl QuadraticIntegrand {
    pub fn new(a: Vec<f64>, c: Vec<f64>, q: f64) -> Result<Self> {
        if a.len() != c.len() {
            return Err(Error::InvalidParameter(
                "linear and shift coefficient lengths differ".into(),
            ));
        }
        Self::check_q(q)?;
        Ok(QuadraticIntegrand { a: Some(a), c, q })
    }

    /// Pure quadratic well `g(x, u) = (q/2) (u - c(x))^2`.
    pub fn centered(c: Vec<f64>, q: f64) -> Result<Self> {
        Self::check_q(q)?;
        Ok(QuadraticIntegrand { a: None, c, q })
    }

    fn check_q(q: f64) -> Result<()> {
        if !(q > 0.0) || !q.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "curvature q = {q} must be positive and finite"
            )));
        }
        Ok(())
    }

    pub fn curvature(&self) -> f64 {
        self.q
    }

    pub fn num_cells(&self) -> usize {
        self.c.len()
    }
}

impl SeparableIntegrand for QuadraticIntegrand {
    fn evaluate(&self, cell: usize, u: f64) -> f64 {
        let d = u - self.c[cell];
        let quad = 0.5 * self.q * d * d;
        match &self.a {
            Some(a) => a[cell] * u + quad,
            None => quad,
        }
    }

    fn pointwise_min(&self, cell: usize) -> (f64, f64) {
        match &self.a {
            // minimum of (q/2)(u - c)^2 is exactly zero at u = c
            None => (self.c[cell], 0.0),
            Some(a) => {
                let a = a[cell];
                let c = self.c[cell];
                (c - a / self.q, a * c - a * a / (2.0 * self.q))
            }
        }
    }
}

/// Solution of the support-budgeted separable problem.
#[derive(Debug, Clone)]
pub struct L0Solution {
    /// The minimizer; exact zeros off the support.
    pub u: GridFunction,
    /// Threshold on `tilde_v`; active cells satisfy `tilde_v <= s`.
    pub s: f64,
    /// Multiplier for the budget constraint, `lambda = -s`.
    pub lambda: f64,
    /// Cells carrying a nonzero value.
    pub support: Indicator,
    /// Measure of the support.
    pub support_measure: f64,
    /// `sum_i w_i g(x_i, u_i)` over all cells.
    pub objective: f64,
    /// The budget the solution was computed for.
    pub tau: f64,
}

struct CellEval {
    minimizer: f64,
    min_value: f64,
    at_zero: f64,
}

fn eval_cells<G: SeparableIntegrand>(g: &G, n: usize) -> Vec<CellEval> {
    let one = |i: usize| {
        let (minimizer, min_value) = g.pointwise_min(i);
        CellEval {
            minimizer,
            min_value,
            at_zero: g.evaluate(i, 0.0),
        }
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        if n >= 16_384 {
            return (0..n).into_par_iter().map(one).collect();
        }
    }
    (0..n).map(one).collect()
}

fn tilde_v_and_min<G: SeparableIntegrand>(g: &G, grid: &Arc<Grid>) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = grid.num_cells();
    let cells = eval_cells(g, n);
    let mut tilde = Vec::with_capacity(n);
    let mut minimizers = Vec::with_capacity(n);
    for (i, cell) in cells.iter().enumerate() {
        if !cell.at_zero.is_finite() || !cell.min_value.is_finite() || !cell.minimizer.is_finite() {
            return Err(Error::InvalidIntegrand { cell: i });
        }
        // nonpositive by definition; clamp away summation dust
        tilde.push((cell.min_value - cell.at_zero).min(0.0));
        minimizers.push(cell.minimizer);
    }
    Ok((tilde, minimizers))
}

/// The pointwise gap `tilde_v(x) = inf_v g(x, v) - g(x, 0) <= 0`.
pub fn compute_tilde_v<G: SeparableIntegrand>(g: &G, grid: &Arc<Grid>) -> Result<GridFunction> {
    let (tilde, _) = tilde_v_and_min(g, grid)?;
    Ok(GridFunction::new(grid.clone(), tilde))
}

fn select_support_impl(
    tilde: &[f64],
    grid: &Grid,
    tau: f64,
) -> Result<(Vec<bool>, f64)> {
    if !(tau > 0.0) || !(tau < grid.total_measure()) || !tau.is_finite() {
        return Err(Error::InvalidTau {
            tau,
            total_measure: grid.total_measure(),
        });
    }
    let n = tilde.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_unstable_by(|&i, &j| tilde[i].total_cmp(&tilde[j]).then(i.cmp(&j)));

    let weights = grid.weights();
    let mut flags = vec![false; n];
    let mut cum = 0.0f64;
    let mut last_selected = None;
    let mut first_excluded = None;
    for &i in &order {
        let v = tilde[i];
        if v >= 0.0 {
            break;
        }
        if fits_budget(cum + weights[i], tau) {
            flags[i] = true;
            cum += weights[i];
            last_selected = Some(v);
        } else {
            first_excluded = Some(v);
            break;
        }
    }
    let s = match first_excluded {
        None => 0.0,
        // smallest-magnitude threshold consistent with the selection: the
        // least negative selected gap, or the most negative excluded gap
        // when nothing fit at all
        Some(v_excl) => last_selected.unwrap_or(v_excl),
    };
    Ok((flags, s))
}

/// Pick the active set for a gap function `tilde_v <= 0` under the budget
/// `tau`, returning the support and the threshold `s <= 0`.
pub fn select_support(tilde_v: &GridFunction, tau: f64) -> Result<(Indicator, f64)> {
    if tilde_v.values().iter().any(|v| *v > 0.0) {
        return Err(Error::InvalidParameter(
            "tilde_v must be nonpositive everywhere".into(),
        ));
    }
    let grid = tilde_v.grid();
    let (flags, s) = select_support_impl(tilde_v.values(), grid, tau)?;
    Ok((Indicator::new(grid.clone(), flags), s))
}

/// Objective along the canonical path shared by the solver and the oracle:
/// per-cell evaluation at the pointwise minimizer (on the support) or zero,
/// pairwise-summed in cell order.
fn objective_for_flags<G: SeparableIntegrand>(
    g: &G,
    grid: &Grid,
    flags: &[bool],
    minimizers: &[f64],
) -> f64 {
    let w = grid.weights();
    exec::pairwise_sum_by(flags.len(), |i| {
        let u = if flags[i] { minimizers[i] } else { 0.0 };
        w[i] * g.evaluate(i, u)
    })
}

fn assemble_solution<G: SeparableIntegrand>(
    g: &G,
    grid: &Arc<Grid>,
    flags: Vec<bool>,
    s: f64,
    tau: f64,
    minimizers: &[f64],
) -> L0Solution {
    let objective = objective_for_flags(g, grid, &flags, minimizers);
    let values: Vec<f64> = flags
        .iter()
        .zip(minimizers)
        .map(|(&on, &m)| if on { m } else { 0.0 })
        .collect();
    let u = GridFunction::new(grid.clone(), values);
    let support = Indicator::new(grid.clone(), flags);
    let support_measure = support.measure();
    let s = if s == 0.0 { 0.0 } else { s };
    L0Solution {
        u,
        s,
        lambda: if s == 0.0 { 0.0 } else { -s },
        support,
        support_measure,
        objective,
        tau,
    }
}

/// Solve the support-budgeted separable problem with the threshold rule.
///
/// The returned control equals the pointwise minimizer on the selected
/// support and is exactly zero elsewhere. On grids with uniform cell weights
/// the result is the global discrete optimum.
pub fn solve_l0<G: SeparableIntegrand>(g: &G, grid: &Arc<Grid>, tau: f64) -> Result<L0Solution> {
    let (tilde, minimizers) = tilde_v_and_min(g, grid)?;
    let (flags, s) = select_support_impl(&tilde, grid, tau)?;
    Ok(assemble_solution(g, grid, flags, s, tau, &minimizers))
}

/// Enumeration limit for [`brute_force_l0`].
pub const BRUTE_FORCE_CELL_LIMIT: usize = 20;

/// Threshold consistent with a given support: zero when every negative-gap
/// cell is active, otherwise the least negative gap among active cells (or
/// the most negative excluded gap when nothing is active).
fn derive_threshold(tilde: &[f64], flags: &[bool]) -> f64 {
    let mut last_selected: Option<f64> = None;
    let mut most_negative_excluded: Option<f64> = None;
    for (i, &v) in tilde.iter().enumerate() {
        if v >= 0.0 {
            continue;
        }
        if flags[i] {
            last_selected = Some(last_selected.map_or(v, |m: f64| m.max(v)));
        } else {
            most_negative_excluded = Some(most_negative_excluded.map_or(v, |m: f64| m.min(v)));
        }
    }
    match most_negative_excluded {
        None => 0.0,
        Some(v_excl) => last_selected.unwrap_or(v_excl),
    }
}

/// Exhaustive oracle: enumerate every feasible subset of cells and keep the
/// best objective along the same arithmetic path as [`solve_l0`]. Subsets are
/// visited in increasing bitmask order and only strict improvements are
/// kept, so ties resolve to the earliest subset.
pub fn brute_force_l0<G: SeparableIntegrand>(
    g: &G,
    grid: &Arc<Grid>,
    tau: f64,
) -> Result<L0Solution> {
    let n = grid.num_cells();
    if n > BRUTE_FORCE_CELL_LIMIT {
        return Err(Error::TooManyCells {
            cells: n,
            limit: BRUTE_FORCE_CELL_LIMIT,
        });
    }
    if !(tau > 0.0) || !(tau < grid.total_measure()) || !tau.is_finite() {
        return Err(Error::InvalidTau {
            tau,
            total_measure: grid.total_measure(),
        });
    }
    let (tilde, minimizers) = tilde_v_and_min(g, grid)?;
    let weights = grid.weights();

    let mut flags = vec![false; n];
    let mut best: Option<(f64, u32)> = None;
    for mask in 0u32..(1u32 << n) {
        for (i, f) in flags.iter_mut().enumerate() {
            *f = mask & (1 << i) != 0;
        }
        let measure =
            exec::pairwise_sum_by(n, |i| if flags[i] { weights[i] } else { 0.0 });
        if !fits_budget(measure, tau) {
            continue;
        }
        let objective = objective_for_flags(g, grid, &flags, &minimizers);
        if best.map_or(true, |(b, _)| objective < b) {
            best = Some((objective, mask));
        }
    }
    let (_, mask) = best.expect("the empty subset is always feasible");
    for (i, f) in flags.iter_mut().enumerate() {
        *f = mask & (1 << i) != 0;
    }
    let s = derive_threshold(&tilde, &flags);
    Ok(assemble_solution(g, grid, flags, s, tau, &minimizers))
}

/// Outcome of checking a solution against the two penalized reformulations.
#[derive(Debug, Clone)]
pub struct PenalizedEquivalence {
    pub lambda: f64,
    pub tol: f64,
    pub trials: usize,
    /// Worst value of `P(trial) - P(solution)` for the `lambda ||u||_0`
    /// penalty; nonnegative (up to `tol`) when the solution is optimal.
    pub worst_margin_l0: f64,
    /// Worst margin for the hinge penalty `lambda (||u||_0 - tau)^+`.
    pub worst_margin_hinge: f64,
    pub violations: usize,
}

impl PenalizedEquivalence {
    pub fn holds(&self) -> bool {
        self.violations == 0
    }
}

/// Check that no trial control beats `sol` in either penalized form:
/// `sum w g(x, u) + lambda ||u||_0` and
/// `sum w g(x, u) + lambda (||u||_0 - tau)^+`.
///
/// Support measures use exact-zero semantics; the margins tolerate `tol` of
/// rounding. Violations are counted, not raised.
pub fn check_penalized_equivalence<G: SeparableIntegrand>(
    sol: &L0Solution,
    g: &G,
    grid: &Arc<Grid>,
    trials: &[GridFunction],
    tol: f64,
) -> Result<PenalizedEquivalence> {
    let w = grid.weights();
    let integral = |u: &GridFunction| -> Result<f64> {
        if !same_grid(u.grid(), grid) {
            return Err(Error::GridMismatch);
        }
        let v = u.values();
        Ok(exec::pairwise_sum_by(v.len(), |i| w[i] * g.evaluate(i, v[i])))
    };
    let lambda = sol.lambda;
    let base = integral(&sol.u)?;
    let base_l0 = sol.u.l0_measure(0.0);
    let p_l0_base = base + lambda * base_l0;
    let p_hinge_base = base + lambda * (base_l0 - sol.tau).max(0.0);

    let mut worst_l0 = f64::INFINITY;
    let mut worst_hinge = f64::INFINITY;
    let mut violations = 0;
    for trial in trials {
        let value = integral(trial)?;
        let l0 = trial.l0_measure(0.0);
        let margin_l0 = value + lambda * l0 - p_l0_base;
        let margin_hinge = value + lambda * (l0 - sol.tau).max(0.0) - p_hinge_base;
        worst_l0 = worst_l0.min(margin_l0);
        worst_hinge = worst_hinge.min(margin_hinge);
        if margin_l0 < -tol || margin_hinge < -tol {
            violations += 1;
        }
    }
    Ok(PenalizedEquivalence {
        lambda,
        tol,
        trials: trials.len(),
        worst_margin_l0: worst_l0,
        worst_margin_hinge: worst_hinge,
        violations,
    })
}
