//! Tracking objective constrained by a Poisson equation.
//!
//! `f(u) = (1/2) || y_u - y_d ||^2` in the weighted L2 norm, where `y_u`
//! solves `A y = u` with homogeneous Dirichlet boundary values and
//! `A y = -div(a grad y)` discretized by the standard second-order stencil
//! on the grid's interior-node lattice. Variable coefficients enter through
//! harmonic face averages. The gradient is computed through the adjoint
//! equation `A phi = y - y_d` (the operator is symmetric), and the gradient
//! Lipschitz bound by power iteration on the solve-twice map.

use std::sync::Arc;

use crate::exec;
use crate::grid::{same_grid, Grid, GridFunction, Lattice};
use crate::linalg::{self, CgOutcome};
use crate::objective::SmoothObjective;
use crate::{Error, Result};

/// Options for the inner conjugate gradient solves.
#[derive(Debug, Clone)]
pub struct PoissonOptions {
    /// Relative residual tolerance.
    pub cg_tol: f64,
    /// Iteration cap as a multiple of the cell count.
    pub cg_max_iter_factor: usize,
}

impl Default for PoissonOptions {
    fn default() -> Self {
        PoissonOptions {
            cg_tol: 1e-10,
            cg_max_iter_factor: 10,
        }
    }
}

enum Stencil {
    One {
        n: usize,
        h: f64,
        /// `n + 1` face coefficients; faces 0 and n touch the boundary.
        face: Vec<f64>,
    },
    Two {
        nx: usize,
        ny: usize,
        hx: f64,
        hy: f64,
        /// `(nx + 1) * ny` vertical-face coefficients, `fx[j * (nx+1) + i]`.
        face_x: Vec<f64>,
        /// `nx * (ny + 1)` horizontal-face coefficients, `fy[j * nx + i]`.
        face_y: Vec<f64>,
    },
}

fn harmonic(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

/// Poisson-constrained tracking objective on an interior-node lattice grid.
pub struct PoissonTracking {
    grid: Arc<Grid>,
    y_d: GridFunction,
    coeff: Vec<f64>,
    options: PoissonOptions,
    stencil: Stencil,
    inv_diag: Vec<f64>,
    raw_lipschitz: f64,
    certified_lipschitz: f64,
    lipschitz_fallback_used: bool,
}

impl PoissonTracking {
    /// Build the objective for a tracking target `y_d`. The grid must come
    /// from [`Grid::interval`] or [`Grid::rectangle`]. `coeff` is the scalar
    /// diffusion field `a(x) > 0` per cell; `None` means `a = 1`.
    pub fn new(
        y_d: GridFunction,
        coeff: Option<GridFunction>,
        options: PoissonOptions,
    ) -> Result<Self> {
        let grid = y_d.grid().clone();
        let n = grid.num_cells();
        let coeff = match coeff {
            Some(c) => {
                if !same_grid(c.grid(), &grid) {
                    return Err(Error::GridMismatch);
                }
                c.values().to_vec()
            }
            None => vec![1.0; n],
        };
        if coeff.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
            return Err(Error::InvalidGrid(
                "the diffusion coefficient must be positive everywhere".into(),
            ));
        }
        let stencil = match grid.lattice() {
            Some(Lattice::Interval { n, h, .. }) => {
                let (n, h) = (*n, *h);
                let mut face = Vec::with_capacity(n + 1);
                face.push(coeff[0]);
                for i in 1..n {
                    face.push(harmonic(coeff[i - 1], coeff[i]));
                }
                face.push(coeff[n - 1]);
                Stencil::One { n, h, face }
            }
            Some(Lattice::Rect { nx, ny, hx, hy, .. }) => {
                let (nx, ny, hx, hy) = (*nx, *ny, *hx, *hy);
                let at = |i: usize, j: usize| coeff[j * nx + i];
                let mut face_x = Vec::with_capacity((nx + 1) * ny);
                for j in 0..ny {
                    for i in 0..=nx {
                        face_x.push(if i == 0 {
                            at(0, j)
                        } else if i == nx {
                            at(nx - 1, j)
                        } else {
                            harmonic(at(i - 1, j), at(i, j))
                        });
                    }
                }
                let mut face_y = Vec::with_capacity(nx * (ny + 1));
                for j in 0..=ny {
                    for i in 0..nx {
                        face_y.push(if j == 0 {
                            at(i, 0)
                        } else if j == ny {
                            at(i, ny - 1)
                        } else {
                            harmonic(at(i, j - 1), at(i, j))
                        });
                    }
                }
                Stencil::Two {
                    nx,
                    ny,
                    hx,
                    hy,
                    face_x,
                    face_y,
                }
            }
            None => {
                return Err(Error::InvalidGrid(
                    "the Poisson objective needs an interval or rectangle lattice".into(),
                ))
            }
        };
        let inv_diag = match &stencil {
            Stencil::One { n, h, face } => (0..*n)
                .map(|i| h * h / (face[i] + face[i + 1]))
                .collect(),
            Stencil::Two {
                nx,
                ny,
                hx,
                hy,
                face_x,
                face_y,
            } => {
                let mut d = Vec::with_capacity(nx * ny);
                for j in 0..*ny {
                    for i in 0..*nx {
                        let dx = (face_x[j * (nx + 1) + i] + face_x[j * (nx + 1) + i + 1])
                            / (hx * hx);
                        let dy = (face_y[j * nx + i] + face_y[(j + 1) * nx + i]) / (hy * hy);
                        d.push(1.0 / (dx + dy));
                    }
                }
                d
            }
        };
        let mut this = PoissonTracking {
            grid,
            y_d,
            coeff,
            options,
            stencil,
            inv_diag,
            raw_lipschitz: 0.0,
            certified_lipschitz: 0.0,
            lipschitz_fallback_used: false,
        };
        this.estimate_lipschitz()?;
        Ok(this)
    }

    /// Apply the discrete elliptic operator to raw nodal values.
    pub fn apply_operator(&self, y: &[f64]) -> Vec<f64> {
        match &self.stencil {
            Stencil::One { n, h, face } => {
                let h2 = h * h;
                exec::map_values(*n, |i| {
                    let left = if i == 0 { 0.0 } else { y[i - 1] };
                    let right = if i + 1 == *n { 0.0 } else { y[i + 1] };
                    (face[i] * (y[i] - left) + face[i + 1] * (y[i] - right)) / h2
                })
            }
            Stencil::Two {
                nx,
                ny,
                hx,
                hy,
                face_x,
                face_y,
            } => {
                let (nx, ny) = (*nx, *ny);
                let (hx2, hy2) = (hx * hx, hy * hy);
                exec::map_values(nx * ny, move |idx| {
                    let i = idx % nx;
                    let j = idx / nx;
                    let yc = y[idx];
                    let yl = if i == 0 { 0.0 } else { y[idx - 1] };
                    let yr = if i + 1 == nx { 0.0 } else { y[idx + 1] };
                    let yd = if j == 0 { 0.0 } else { y[idx - nx] };
                    let yu = if j + 1 == ny { 0.0 } else { y[idx + nx] };
                    let fxl = face_x[j * (nx + 1) + i];
                    let fxr = face_x[j * (nx + 1) + i + 1];
                    let fyd = face_y[j * nx + i];
                    let fyu = face_y[(j + 1) * nx + i];
                    (fxl * (yc - yl) + fxr * (yc - yr)) / hx2
                        + (fyd * (yc - yd) + fyu * (yc - yu)) / hy2
                })
            }
        }
    }

    fn solve(&self, rhs: &[f64]) -> Result<CgOutcome> {
        let max_iter = self.options.cg_max_iter_factor * self.grid.num_cells();
        linalg::pcg(
            |x| self.apply_operator(x),
            &self.inv_diag,
            rhs,
            self.options.cg_tol,
            max_iter.max(50),
        )
    }

    /// State solve: `y` with `A y = u` and zero boundary values.
    pub fn solve_state(&self, u: &GridFunction) -> Result<GridFunction> {
        if !same_grid(u.grid(), &self.grid) {
            return Err(Error::GridMismatch);
        }
        let out = self.solve(u.values())?;
        Ok(GridFunction::new(self.grid.clone(), out.x))
    }

    /// Adjoint solve: `phi` with `A phi = y - y_d`.
    pub fn solve_adjoint(&self, y: &GridFunction) -> Result<GridFunction> {
        if !same_grid(y.grid(), &self.grid) {
            return Err(Error::GridMismatch);
        }
        let rhs: Vec<f64> = y
            .values()
            .iter()
            .zip(self.y_d.values())
            .map(|(yi, di)| yi - di)
            .collect();
        let out = self.solve(&rhs)?;
        Ok(GridFunction::new(self.grid.clone(), out.x))
    }

    pub fn target(&self) -> &GridFunction {
        &self.y_d
    }

    pub fn coefficient(&self) -> &[f64] {
        &self.coeff
    }

    /// Power-iteration estimate of the gradient Lipschitz constant, before
    /// the safety factor.
    pub fn raw_lipschitz_estimate(&self) -> f64 {
        self.raw_lipschitz
    }

    /// Whether the certified bound came from the coercivity fallback rather
    /// than a converged power iteration.
    pub fn lipschitz_fallback_used(&self) -> bool {
        self.lipschitz_fallback_used
    }

    /// Rigorous lower bound on the smallest operator eigenvalue:
    /// `min a(x)` times the exact smallest eigenvalue of the discrete
    /// Dirichlet Laplacian on the lattice.
    fn operator_coercivity(&self) -> f64 {
        let min_a = self.coeff.iter().cloned().fold(f64::INFINITY, f64::min);
        let laplace_min = match &self.stencil {
            Stencil::One { n, h, .. } => {
                let len = (*n as f64 + 1.0) * h;
                let s = (std::f64::consts::PI * h / (2.0 * len)).sin();
                4.0 / (h * h) * s * s
            }
            Stencil::Two { nx, ny, hx, hy, .. } => {
                let lx = (*nx as f64 + 1.0) * hx;
                let ly = (*ny as f64 + 1.0) * hy;
                let sx = (std::f64::consts::PI * hx / (2.0 * lx)).sin();
                let sy = (std::f64::consts::PI * hy / (2.0 * ly)).sin();
                4.0 / (hx * hx) * sx * sx + 4.0 / (hy * hy) * sy * sy
            }
        };
        min_a * laplace_min
    }

    fn estimate_lipschitz(&mut self) -> Result<()> {
        let n = self.grid.num_cells();
        let w = self.grid.weights().to_vec();
        let apply_t = |v: &[f64]| -> Result<Vec<f64>> {
            let sv = self.solve(v)?.x;
            let scaled: Vec<f64> = sv.iter().zip(&w).map(|(x, wi)| x * wi).collect();
            let mut out = self.solve(&scaled)?.x;
            for (x, wi) in out.iter_mut().zip(&w) {
                *x /= wi;
            }
            Ok(out)
        };
        let est = linalg::operator_norm_weighted(apply_t, self.grid.weights(), 1e-13, 2_000)?;
        self.raw_lipschitz = est.value.max(0.0);
        if est.converged {
            self.certified_lipschitz = self.raw_lipschitz * 1.05;
        } else {
            let coercivity = self.operator_coercivity();
            let fallback = 1.0 / (coercivity * coercivity);
            self.certified_lipschitz = self.raw_lipschitz.max(fallback) * 1.05;
            self.lipschitz_fallback_used = true;
        }
        let _ = n;
        Ok(())
    }
}

impl SmoothObjective for PoissonTracking {
    fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    fn value(&self, u: &GridFunction) -> Result<f64> {
        let y = self.solve_state(u)?;
        Ok(0.5 * y.dist_sq(&self.y_d)?)
    }

    fn gradient(&self, u: &GridFunction) -> Result<GridFunction> {
        let y = self.solve_state(u)?;
        self.solve_adjoint(&y)
    }

    fn value_and_gradient(&self, u: &GridFunction) -> Result<(f64, GridFunction)> {
        let y = self.solve_state(u)?;
        let value = 0.5 * y.dist_sq(&self.y_d)?;
        Ok((value, self.solve_adjoint(&y)?))
    }

    fn lipschitz_bound(&self) -> f64 {
        self.certified_lipschitz
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tracking_1d(n: usize, y_d: impl Fn(f64) -> f64 + Sync + Send) -> PoissonTracking {
        let grid = Grid::interval(0.0, 1.0, n).unwrap();
        let target = GridFunction::from_fn(grid.clone(), |i| y_d(grid.coord(i)[0]));
        PoissonTracking::new(target, None, PoissonOptions::default()).unwrap()
    }

    fn random_gf(grid: &Arc<Grid>, rng: &mut ChaCha8Rng, scale: f64) -> GridFunction {
        let values = (0..grid.num_cells())
            .map(|_| rng.gen_range(-scale..scale))
            .collect();
        GridFunction::new(grid.clone(), values)
    }

    #[test]
    fn zero_source_gives_zero_state() {
        let p = tracking_1d(16, |_| 0.0);
        let y = p.solve_state(&GridFunction::zeros(p.grid().clone())).unwrap();
        assert!(y.linf_norm() <= 1e-12);
    }

    #[test]
    fn constant_source_matches_the_parabola() {
        // -y'' = 1 on (0, 1): y = x(1 - x)/2; the stencil is exact on
        // quadratics, so nodal errors are at solver tolerance
        let p = tracking_1d(128, |_| 0.0);
        let grid = p.grid().clone();
        let u = GridFunction::from_fn(grid.clone(), |_| 1.0);
        let y = p.solve_state(&u).unwrap();
        let mut worst = 0.0f64;
        for i in 0..grid.num_cells() {
            let x = grid.coord(i)[0];
            worst = worst.max((y.values()[i] - 0.5 * x * (1.0 - x)).abs());
        }
        let h = 1.0 / 129.0;
        assert!(worst <= h * h, "worst nodal error {worst:e}");
        assert!(worst <= 1e-9, "should be at solver tolerance, got {worst:e}");
    }

    #[test]
    fn state_solve_is_linear_to_solver_tolerance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = tracking_1d(32, |_| 0.0);
        let grid = p.grid().clone();
        let u1 = random_gf(&grid, &mut rng, 1.0);
        let u2 = random_gf(&grid, &mut rng, 1.0);
        let mut sum = u1.clone();
        for i in 0..grid.num_cells() {
            sum.values_mut()[i] += u2.values()[i];
        }
        let y1 = p.solve_state(&u1).unwrap();
        let y2 = p.solve_state(&u2).unwrap();
        let ysum = p.solve_state(&sum).unwrap();
        for i in 0..grid.num_cells() {
            assert!((ysum.values()[i] - y1.values()[i] - y2.values()[i]).abs() <= 1e-8);
        }
    }

    #[test]
    fn adjoint_of_matching_state_is_zero() {
        let p = tracking_1d(24, |x| (std::f64::consts::PI * x).sin());
        let phi = p.solve_adjoint(p.target()).unwrap();
        assert!(phi.linf_norm() <= 1e-10);
    }

    #[test]
    fn operator_is_self_adjoint_in_the_weighted_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let grid = Grid::interval(0.0, 1.0, 20).unwrap();
        let coeff = GridFunction::from_fn(grid.clone(), |i| 1.0 + 0.5 * ((i as f64) * 0.9).sin());
        let target = GridFunction::zeros(grid.clone());
        let p = PoissonTracking::new(target, Some(coeff), PoissonOptions::default()).unwrap();
        for _ in 0..5 {
            let a = random_gf(&grid, &mut rng, 1.0);
            let b = random_gf(&grid, &mut rng, 1.0);
            let aa = GridFunction::new(grid.clone(), p.apply_operator(a.values()));
            let ab = GridFunction::new(grid.clone(), p.apply_operator(b.values()));
            let lhs = aa.weighted_dot(&b).unwrap();
            let rhs = a.weighted_dot(&ab).unwrap();
            assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let grid = Grid::interval(0.0, 1.0, 16).unwrap();
        let target = GridFunction::from_fn(grid.clone(), |i| {
            let x = grid.coord(i)[0];
            (2.0 * std::f64::consts::PI * x).sin() * 0.3
        });
        let p = PoissonTracking::new(
            target,
            None,
            PoissonOptions {
                cg_tol: 1e-12,
                ..Default::default()
            },
        )
        .unwrap();
        let u = random_gf(&grid, &mut rng, 1.0);
        let g = p.gradient(&u).unwrap();
        let h = 1e-5;
        for _ in 0..4 {
            let d = random_gf(&grid, &mut rng, 1.0);
            let mut up = u.clone();
            let mut dn = u.clone();
            for i in 0..grid.num_cells() {
                up.values_mut()[i] += h * d.values()[i];
                dn.values_mut()[i] -= h * d.values()[i];
            }
            let fd = (p.value(&up).unwrap() - p.value(&dn).unwrap()) / (2.0 * h);
            let directional = g.weighted_dot(&d).unwrap();
            let scale = fd.abs().max(directional.abs()).max(1e-12);
            assert!(
                (fd - directional).abs() / scale <= 1e-6,
                "fd {fd:e} vs adjoint {directional:e}"
            );
        }
    }

    #[test]
    fn lipschitz_bound_approaches_the_continuum_value() {
        let reference = 1.0 / std::f64::consts::PI.powi(4);
        let mut previous_error = f64::INFINITY;
        for n in [64usize, 128, 256] {
            let p = tracking_1d(n, |_| 0.0);
            let raw = p.raw_lipschitz_estimate();
            let err = (raw - reference).abs();
            assert!(err < previous_error, "n = {n}: {err:e} vs {previous_error:e}");
            previous_error = err;
            if n == 256 {
                assert!(err <= 0.02 * reference, "relative error {:e}", err / reference);
            }
            assert!(!p.lipschitz_fallback_used());
        }
    }

    #[test]
    fn doubling_the_coefficient_quarters_the_lipschitz_estimate() {
        let grid = Grid::interval(0.0, 1.0, 48).unwrap();
        let target = GridFunction::zeros(grid.clone());
        let a1 = GridFunction::from_fn(grid.clone(), |i| 1.0 + 0.3 * ((i as f64) * 0.4).cos());
        let a2 = GridFunction::new(grid.clone(), a1.values().iter().map(|a| 2.0 * a).collect());
        let p1 = PoissonTracking::new(target.clone(), Some(a1), PoissonOptions::default()).unwrap();
        let p2 = PoissonTracking::new(target, Some(a2), PoissonOptions::default()).unwrap();
        let ratio = p2.raw_lipschitz_estimate() / p1.raw_lipschitz_estimate();
        assert!((ratio - 0.25).abs() <= 1e-10 * 0.25 + 1e-12, "ratio {ratio}");
    }

    #[test]
    fn two_dimensional_state_matches_a_manufactured_solution() {
        use std::f64::consts::PI;
        let grid = Grid::rectangle([[0.0, 1.0], [0.0, 1.0]], 24, 24).unwrap();
        let target = GridFunction::zeros(grid.clone());
        let p = PoissonTracking::new(target, None, PoissonOptions::default()).unwrap();
        // -lap y = 2 pi^2 sin(pi x) sin(pi y) has solution sin(pi x) sin(pi y)
        let u = GridFunction::from_fn(grid.clone(), |i| {
            let [x, y] = grid.coord(i);
            2.0 * PI * PI * (PI * x).sin() * (PI * y).sin()
        });
        let y = p.solve_state(&u).unwrap();
        let mut worst = 0.0f64;
        for i in 0..grid.num_cells() {
            let [cx, cy] = grid.coord(i);
            worst = worst.max((y.values()[i] - (PI * cx).sin() * (PI * cy).sin()).abs());
        }
        let h = 1.0 / 25.0;
        assert!(worst <= 2.0 * h * h, "worst error {worst:e}");
    }

    #[test]
    fn gradient_stays_bounded_on_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = tracking_1d(32, |x| x * (1.0 - x));
        let grid = p.grid().clone();
        // ||grad f(u)|| <= ||S||^2 ||u|| + ||S|| ||y_d|| with ||S||^2 <= L_f
        let s_norm_sq = p.lipschitz_bound();
        let s_norm = s_norm_sq.sqrt();
        let yd_norm = p.target().weighted_norm();
        for _ in 0..10 {
            let u = random_gf(&grid, &mut rng, 5.0);
            let g = p.gradient(&u).unwrap();
            let bound = s_norm_sq * u.weighted_norm() + s_norm * yd_norm;
            assert!(g.weighted_norm() <= bound + 1e-10);
        }
    }

    #[test]
    fn non_lattice_grids_are_rejected() {
        let grid = Grid::from_weights(vec![1.0; 8]).unwrap();
        let target = GridFunction::zeros(grid);
        assert!(matches!(
            PoissonTracking::new(target, None, PoissonOptions::default()),
            Err(Error::InvalidGrid(_))
        ));
    }
}
