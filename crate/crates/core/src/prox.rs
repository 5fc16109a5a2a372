//! Proximal gradient loop with closed-form support-budgeted steps.
//!
//! Each iteration linearizes the smooth part around the current iterate and
//! solves
//!
//! ```text
//! min_{||u||_0 <= tau}  <grad_k, u - u_k> + (L/2) ||u - u_k||^2 + (alpha/2) ||u||^2
//! ```
//!
//! exactly through [`crate::separable::solve_l0`]: the subproblem separates
//! over cells into quadratic wells centered at
//! `u_tilde = (L u_k - grad_k) / (L + alpha)` with gaps
//! `tilde_v = -(L u_k - grad_k)^2 / (2 (L + alpha))`. Off-support values are
//! written as exact zeros. The loop records, per iteration, the quantities
//! the theory controls: the descent slack, the away-from-zero bound on
//! supported values, the support-change bound, the pointwise complementarity
//! residual, and the fixed-point identity residual.

use std::io::Write;

use crate::grid::{same_grid, GridFunction, Indicator};
use crate::objective::SmoothObjective;
use crate::separable::{solve_l0, QuadraticIntegrand};
use crate::{exec, Error, Result};

/// Step-size policy for the prox parameter.
#[derive(Debug, Clone, PartialEq)]
pub enum Backtracking {
    /// Use `ProxGradConfig::l` every iteration; it should exceed the
    /// gradient's Lipschitz bound.
    Off,
    /// Per iteration, accept the smallest `initial_l * growth^j` that passes
    /// the quadratic descent test.
    On { initial_l: f64, growth: f64 },
}

/// Configuration of the proximal gradient loop.
#[derive(Debug, Clone)]
pub struct ProxGradConfig {
    /// Prox parameter (plays the role of an inverse step size).
    pub l: f64,
    /// Tikhonov weight on `||u||^2`.
    pub alpha: f64,
    /// Support budget.
    pub tau: f64,
    pub max_iter: usize,
    /// Stop when the weighted step norm falls below this.
    pub step_norm_tol: f64,
    pub backtracking: Backtracking,
    /// Tolerance for support queries on iterates. Off-support values are
    /// exact zeros, so 0 is the faithful choice.
    pub zero_tol: f64,
}

impl ProxGradConfig {
    pub fn new(l: f64, alpha: f64, tau: f64) -> Self {
        ProxGradConfig {
            l,
            alpha,
            tau,
            max_iter: 1000,
            step_norm_tol: 1e-12,
            backtracking: Backtracking::Off,
            zero_tol: 0.0,
        }
    }
}

/// One accepted iterate and its diagnostics. Iterates are numbered from
/// `k = 1`; quantities comparing `k` to `k - 1` that need the previous
/// multiplier are `NaN` on the first record.
#[derive(Debug, Clone)]
pub struct IterateRecord {
    pub k: usize,
    /// `F_k = f(u_k) + (alpha/2) ||u_k||^2`.
    pub objective: f64,
    /// Multiplier of the prox subproblem that produced this iterate.
    pub lambda: f64,
    /// Threshold `s = -lambda`.
    pub s: f64,
    /// `||u_k - u_{k-1}||^2` (weighted).
    pub step_norm_sq: f64,
    /// `||u_k||_0`.
    pub support_measure: f64,
    /// `||chi_k - chi_{k-1}||_{L1}`.
    pub support_change: f64,
    /// `F_{k-1} - F_k - ((L - L_f)/2) ||step||^2`; nonnegative when
    /// `L > L_f` and the previous iterate was feasible.
    pub descent_slack: f64,
    /// `min_{supp} |u_k| - sqrt(2 lambda / (L + alpha))`; infinite when the
    /// support is empty.
    pub away_from_zero_slack: f64,
    /// `||step||^2 - (2 min(lambda_{k-1}, lambda_k)/(L + alpha)) ||chi_k -
    /// chi_{k-1}||_{L1}`; `NaN` on the first record.
    pub support_change_slack: f64,
    /// Worst pointwise complementarity violation
    /// `max(0, max_{supp} (lambda - (L u_{k-1} - grad_{k-1})^2 / (2(L+alpha))))`.
    pub prox_comp_residual: f64,
    /// `|| alpha u_k + chi_k (grad_{k-1} + L (u_k - u_{k-1})) ||_inf`; an
    /// algebraic identity of the closed-form step, so at rounding level.
    pub fixed_point_residual: f64,
    /// Prox parameter used for this step.
    pub l: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TerminationReason {
    StepNormTolerance,
    MaxIterations,
    BacktrackingFailed,
}

impl TerminationReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            TerminationReason::StepNormTolerance => "tolerance",
            TerminationReason::MaxIterations => "max_iter",
            TerminationReason::BacktrackingFailed => "backtracking failure",
        }
    }
}

/// Full history of a proximal gradient run.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub config: ProxGradConfig,
    /// `F_0` at the starting point.
    pub initial_objective: f64,
    /// Certified Lipschitz bound of the objective used for the slack fields.
    pub lipschitz_bound: f64,
    /// Set when backtracking is off and `l` does not exceed the certified
    /// Lipschitz bound, in which case monotone descent is not guaranteed.
    pub l_not_above_lipschitz: bool,
    pub records: Vec<IterateRecord>,
    pub final_u: GridFunction,
    pub termination: TerminationReason,
}

impl Trajectory {
    pub fn final_lambda(&self) -> Option<f64> {
        self.records.last().map(|r| r.lambda)
    }

    /// Smallest multiplier over the last `window` records; diagnostic for
    /// whether the multipliers stay bounded away from zero.
    pub fn lambda_tail_min(&self, window: usize) -> Option<f64> {
        let n = self.records.len();
        if n == 0 || window == 0 {
            return None;
        }
        let start = n.saturating_sub(window);
        self.records[start..]
            .iter()
            .map(|r| r.lambda)
            .fold(None, |acc: Option<f64>, x| Some(acc.map_or(x, |a| a.min(x))))
    }

    /// Write the per-iteration table as CSV with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "k,objective,lambda,step_norm_sq,support_measure,support_change,\
             descent_slack,away_slack,change_slack"
        )?;
        for r in &self.records {
            writeln!(
                out,
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                r.k,
                r.objective,
                r.lambda,
                r.step_norm_sq,
                r.support_measure,
                r.support_change,
                r.descent_slack,
                r.away_from_zero_slack,
                r.support_change_slack,
            )?;
        }
        Ok(())
    }
}

/// Result of one prox step.
#[derive(Debug, Clone)]
pub struct ProxStep {
    pub u: GridFunction,
    pub lambda: f64,
    pub s: f64,
    pub support: Indicator,
}

/// Solve the prox subproblem at `u_k` with gradient `grad_k`.
///
/// On the selected support the new iterate equals
/// `(L u_k - grad_k)/(L + alpha)`; elsewhere it is exactly zero. The
/// returned multiplier satisfies the budget complementarity up to cell
/// granularity: when it is positive, the unused budget is below the largest
/// cell weight.
pub fn prox_step(
    u_k: &GridFunction,
    grad_k: &GridFunction,
    l: f64,
    alpha: f64,
    tau: f64,
) -> Result<ProxStep> {
    if !same_grid(u_k.grid(), grad_k.grid()) {
        return Err(Error::GridMismatch);
    }
    if !(l > 0.0) || !l.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "prox parameter l = {l} must be positive"
        )));
    }
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "alpha = {alpha} must be nonnegative"
        )));
    }
    let grid = u_k.grid();
    let q = l + alpha;
    let uv = u_k.values();
    let gv = grad_k.values();
    let centers = exec::map_values(grid.num_cells(), |i| (l * uv[i] - gv[i]) / q);
    let integrand = QuadraticIntegrand::centered(centers, q)?;
    let sol = solve_l0(&integrand, grid, tau)?;
    Ok(ProxStep {
        u: sol.u,
        lambda: sol.lambda,
        s: sol.s,
        support: sol.support,
    })
}

/// Find the smallest `initial_l * growth^j` whose prox step passes the
/// quadratic descent test
/// `f(u_+) <= f(u_k) + <grad_k, u_+ - u_k> + (L/2) ||u_+ - u_k||^2`,
/// trying at most 60 increases. Returns the accepted parameter, the step it
/// produced, and `f` at the new point.
pub fn backtrack_l<O: SmoothObjective + ?Sized>(
    objective: &O,
    u_k: &GridFunction,
    f_k: f64,
    grad_k: &GridFunction,
    alpha: f64,
    tau: f64,
    initial_l: f64,
    growth: f64,
) -> Result<(f64, ProxStep, f64)> {
    if !(growth > 1.0) || !(initial_l > 0.0) {
        return Err(Error::InvalidParameter(
            "backtracking needs initial_l > 0 and growth > 1".into(),
        ));
    }
    const MAX_INCREASES: usize = 60;
    let slack = 1e-12 * (1.0 + f_k.abs());
    let mut l = initial_l;
    for _ in 0..=MAX_INCREASES {
        let step = prox_step(u_k, grad_k, l, alpha, tau)?;
        let f_next = objective.value(&step.u)?;
        let w = u_k.grid().weights();
        let (a, b, g) = (step.u.values(), u_k.values(), grad_k.values());
        let inner = exec::pairwise_sum_by(a.len(), |i| w[i] * g[i] * (a[i] - b[i]));
        let dist_sq = exec::pairwise_sum_by(a.len(), |i| {
            let d = a[i] - b[i];
            w[i] * d * d
        });
        if f_next <= f_k + inner + 0.5 * l * dist_sq + slack {
            return Ok((l, step, f_next));
        }
        l *= growth;
    }
    Err(Error::BacktrackingExhausted {
        tries: MAX_INCREASES,
    })
}

/// Run the proximal gradient loop from `u0`.
///
/// The starting point need not be feasible; the first step lands in the
/// budget set and every later iterate stays there. Records start at `k = 1`.
pub fn run<O: SmoothObjective + ?Sized>(
    config: &ProxGradConfig,
    objective: &O,
    u0: &GridFunction,
) -> Result<Trajectory> {
    if !same_grid(u0.grid(), objective.grid()) {
        return Err(Error::GridMismatch);
    }
    if config.max_iter == 0 {
        return Err(Error::InvalidParameter("max_iter must be at least 1".into()));
    }
    if !(config.step_norm_tol >= 0.0) {
        return Err(Error::InvalidParameter(
            "step_norm_tol must be nonnegative".into(),
        ));
    }
    let grid = u0.grid().clone();
    let total = grid.total_measure();
    if !(config.tau > 0.0) || !(config.tau < total) {
        return Err(Error::InvalidTau {
            tau: config.tau,
            total_measure: total,
        });
    }
    let lf = objective.lipschitz_bound();
    let l_not_above_lipschitz =
        matches!(config.backtracking, Backtracking::Off) && !(config.l > lf);

    let (mut f_k, mut grad_k) = objective.value_and_gradient(u0)?;
    let mut u_k = u0.clone();
    let mut chi_k = u0.support(config.zero_tol);
    let mut objective_k = f_k + 0.5 * config.alpha * u_k.weighted_norm_sq();
    let initial_objective = objective_k;
    let mut lambda_prev: Option<f64> = None;

    let mut records = Vec::new();
    let mut termination = TerminationReason::MaxIterations;

    for k in 1..=config.max_iter {
        let stepped = match &config.backtracking {
            Backtracking::Off => {
                let step = prox_step(&u_k, &grad_k, config.l, config.alpha, config.tau)?;
                let f_next = objective.value(&step.u)?;
                Ok((config.l, step, f_next))
            }
            Backtracking::On { initial_l, growth } => backtrack_l(
                objective,
                &u_k,
                f_k,
                &grad_k,
                config.alpha,
                config.tau,
                *initial_l,
                *growth,
            ),
        };
        let (l_used, step, f_next) = match stepped {
            Ok(x) => x,
            Err(Error::BacktrackingExhausted { .. }) => {
                termination = TerminationReason::BacktrackingFailed;
                break;
            }
            Err(e) => return Err(e),
        };
        let q = l_used + config.alpha;
        let step_norm_sq = step.u.dist_sq(&u_k)?;
        let objective_next = f_next + 0.5 * config.alpha * step.u.weighted_norm_sq();

        let descent_slack = objective_k - objective_next - 0.5 * (l_used - lf) * step_norm_sq;

        let threshold = (2.0 * step.lambda / q).sqrt();
        let mut away = f64::INFINITY;
        let mut prox_comp = 0.0f64;
        let mut fixed_point = 0.0f64;
        {
            let (un, uo, gv) = (step.u.values(), u_k.values(), grad_k.values());
            for i in 0..un.len() {
                if step.support.contains(i) {
                    away = away.min(un[i].abs() - threshold);
                    let t = l_used * uo[i] - gv[i];
                    prox_comp = prox_comp.max(step.lambda - t * t / (2.0 * q));
                    let r = config.alpha * un[i] + gv[i] + l_used * (un[i] - uo[i]);
                    fixed_point = fixed_point.max(r.abs());
                } else {
                    fixed_point = fixed_point.max((config.alpha * un[i]).abs());
                }
            }
        }
        let support_change = step.support.l1_distance(&chi_k)?;
        let support_change_slack = match lambda_prev {
            Some(lp) => step_norm_sq - (2.0 * lp.min(step.lambda) / q) * support_change,
            None => f64::NAN,
        };

        records.push(IterateRecord {
            k,
            objective: objective_next,
            lambda: step.lambda,
            s: step.s,
            step_norm_sq,
            support_measure: step.support.measure(),
            support_change,
            descent_slack,
            away_from_zero_slack: away,
            support_change_slack,
            prox_comp_residual: prox_comp.max(0.0),
            fixed_point_residual: fixed_point,
            l: l_used,
        });

        let (f_new, grad_new) = objective.value_and_gradient(&step.u)?;
        u_k = step.u;
        chi_k = step.support;
        lambda_prev = Some(step.lambda);
        f_k = f_new;
        grad_k = grad_new;
        objective_k = objective_next;

        if step_norm_sq.sqrt() < config.step_norm_tol {
            termination = TerminationReason::StepNormTolerance;
            break;
        }
    }

    Ok(Trajectory {
        config: config.clone(),
        initial_objective,
        lipschitz_bound: lf,
        l_not_above_lipschitz,
        records,
        final_u: u_k,
        termination,
    })
}
