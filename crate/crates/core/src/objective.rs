//! The smooth-objective contract and a quadratic instance of it.

use std::sync::Arc;

use crate::grid::{same_grid, Grid, GridFunction};
use crate::linalg;
use crate::{Error, Result};

/// A smooth function `f` of a grid function: bounded below, differentiable,
/// with a gradient that is Lipschitz in the weighted L2 metric.
///
/// `gradient` returns the Riesz representative of the derivative in the
/// weighted inner product, so `f(u + h d) ~ f(u) + h <grad, d>_W`.
/// `lipschitz_bound` must be a certified upper bound on the gradient's
/// Lipschitz constant in the same metric.
pub trait SmoothObjective: Send + Sync {
    fn grid(&self) -> &Arc<Grid>;

    fn value(&self, u: &GridFunction) -> Result<f64>;

    fn gradient(&self, u: &GridFunction) -> Result<GridFunction>;

    /// Value and gradient together; implementations that share intermediate
    /// state override this.
    fn value_and_gradient(&self, u: &GridFunction) -> Result<(f64, GridFunction)> {
        Ok((self.value(u)?, self.gradient(u)?))
    }

    /// Certified upper bound on the Lipschitz constant of the gradient.
    fn lipschitz_bound(&self) -> f64;
}

/// A linear map on raw cell values; `apply_transpose` is the Euclidean
/// transpose (weights are handled by the caller).
pub trait LinearMap: Send + Sync {
    fn apply(&self, x: &[f64], out: &mut [f64]);
    fn apply_transpose(&self, x: &[f64], out: &mut [f64]);
}

/// The identity map.
pub struct IdentityMap;

impl LinearMap for IdentityMap {
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(x);
    }
    fn apply_transpose(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(x);
    }
}

/// Cellwise scaling.
pub struct DiagonalMap {
    diag: Vec<f64>,
}

impl DiagonalMap {
    pub fn new(diag: Vec<f64>) -> Self {
        DiagonalMap { diag }
    }
}

impl LinearMap for DiagonalMap {
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (o, (xi, d)) in out.iter_mut().zip(x.iter().zip(&self.diag)) {
            *o = xi * d;
        }
    }
    fn apply_transpose(&self, x: &[f64], out: &mut [f64]) {
        self.apply(x, out);
    }
}

/// Dense row-major square matrix.
pub struct DenseMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::InvalidParameter(format!(
                "dense matrix needs {} entries, got {}",
                n * n,
                data.len()
            )));
        }
        Ok(DenseMatrix { n, data })
    }
}

impl LinearMap for DenseMatrix {
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.data[i * self.n..(i + 1) * self.n];
            *o = crate::exec::pairwise_sum_by(self.n, |j| row[j] * x[j]);
        }
    }
    fn apply_transpose(&self, x: &[f64], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = crate::exec::pairwise_sum_by(self.n, |i| self.data[i * self.n + j] * x[i]);
        }
    }
}

/// `f(u) = (1/2) || K u - b ||^2` in the weighted L2 norm.
///
/// The gradient in the weighted metric is `W^{-1} K^T W (K u - b)`, and the
/// Lipschitz bound is the largest eigenvalue of `W^{-1} K^T W K`, estimated
/// by power iteration at construction and multiplied by a 1.05 safety
/// factor.
pub struct QuadraticObjective {
    grid: Arc<Grid>,
    k: Box<dyn LinearMap>,
    b: GridFunction,
    raw_lipschitz: f64,
    certified_lipschitz: f64,
}

impl QuadraticObjective {
    pub fn new(grid: Arc<Grid>, k: Box<dyn LinearMap>, b: GridFunction) -> Result<Self> {
        if !same_grid(&grid, b.grid()) {
            return Err(Error::GridMismatch);
        }
        let n = grid.num_cells();
        let w = grid.weights().to_vec();
        let apply_t = |v: &[f64]| -> Result<Vec<f64>> {
            let mut kv = vec![0.0; n];
            k.apply(v, &mut kv);
            for (x, wi) in kv.iter_mut().zip(&w) {
                *x *= wi;
            }
            let mut out = vec![0.0; n];
            k.apply_transpose(&kv, &mut out);
            for (x, wi) in out.iter_mut().zip(&w) {
                *x /= wi;
            }
            Ok(out)
        };
        let est = linalg::operator_norm_weighted(apply_t, grid.weights(), 1e-13, 10_000)?;
        let raw = est.value.max(0.0);
        // a stagnated Rayleigh quotient gets a wider margin
        let certified = raw * if est.converged { 1.05 } else { 1.25 };
        Ok(QuadraticObjective {
            grid,
            k,
            b,
            raw_lipschitz: raw,
            certified_lipschitz: certified,
        })
    }

    /// `f(u) = (1/2) || u - b ||^2`.
    pub fn identity(grid: Arc<Grid>, b: GridFunction) -> Result<Self> {
        Self::new(grid, Box::new(IdentityMap), b)
    }

    /// Power-iteration estimate before the safety factor.
    pub fn raw_lipschitz_estimate(&self) -> f64 {
        self.raw_lipschitz
    }

    fn residual(&self, u: &GridFunction) -> Result<Vec<f64>> {
        if !same_grid(u.grid(), &self.grid) {
            return Err(Error::GridMismatch);
        }
        let n = self.grid.num_cells();
        let mut r = vec![0.0; n];
        self.k.apply(u.values(), &mut r);
        for (ri, bi) in r.iter_mut().zip(self.b.values()) {
            *ri -= bi;
        }
        Ok(r)
    }
}

impl SmoothObjective for QuadraticObjective {
    fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    fn value(&self, u: &GridFunction) -> Result<f64> {
        let r = self.residual(u)?;
        let w = self.grid.weights();
        Ok(0.5 * crate::exec::pairwise_sum_by(r.len(), |i| w[i] * r[i] * r[i]))
    }

    fn gradient(&self, u: &GridFunction) -> Result<GridFunction> {
        let mut r = self.residual(u)?;
        let w = self.grid.weights();
        for (ri, wi) in r.iter_mut().zip(w) {
            *ri *= wi;
        }
        let mut g = vec![0.0; r.len()];
        self.k.apply_transpose(&r, &mut g);
        for (gi, wi) in g.iter_mut().zip(w) {
            *gi /= wi;
        }
        Ok(GridFunction::new(self.grid.clone(), g))
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

    fn unit_grid(n: usize) -> Arc<Grid> {
        Grid::from_weights(vec![1.0; n]).unwrap()
    }

    #[test]
    fn identity_objective_gradient_is_u_minus_b() {
        let grid = unit_grid(5);
        let b = GridFunction::new(grid.clone(), vec![1.0, -1.0, 2.0, 0.0, 3.0]);
        let obj = QuadraticObjective::identity(grid.clone(), b.clone()).unwrap();
        let u = GridFunction::new(grid, vec![2.0, 0.0, 0.0, 1.0, 3.0]);
        let g = obj.gradient(&u).unwrap();
        for i in 0..5 {
            assert!((g.values()[i] - (u.values()[i] - b.values()[i])).abs() < 1e-15);
        }
        assert_eq!(obj.raw_lipschitz_estimate(), 1.0);
        assert!((obj.lipschitz_bound() - 1.05).abs() < 1e-15);
    }

    #[test]
    fn diagonal_objective_lipschitz_is_largest_squared_entry() {
        let grid = Grid::from_weights(vec![0.5, 0.5, 0.5]).unwrap();
        let b = GridFunction::zeros(grid.clone());
        let k = DiagonalMap::new(vec![2.0, -3.0, 1.0]);
        let obj = QuadraticObjective::new(grid, Box::new(k), b).unwrap();
        assert!((obj.raw_lipschitz_estimate() - 9.0).abs() < 1e-8);
    }

    #[test]
    fn gradient_matches_finite_differences_for_a_dense_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 6;
        let grid = Grid::from_weights((0..n).map(|_| rng.gen_range(0.2..2.0)).collect()).unwrap();
        let data: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let k = DenseMatrix::new(n, data).unwrap();
        let b = GridFunction::new(grid.clone(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let obj = QuadraticObjective::new(grid.clone(), Box::new(k), b).unwrap();

        let u = GridFunction::new(grid.clone(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let g = obj.gradient(&u).unwrap();
        let h = 1e-6;
        for _ in 0..5 {
            let d = GridFunction::new(grid.clone(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect());
            let mut up = u.clone();
            let mut dn = u.clone();
            for i in 0..n {
                up.values_mut()[i] += h * d.values()[i];
                dn.values_mut()[i] -= h * d.values()[i];
            }
            let fd = (obj.value(&up).unwrap() - obj.value(&dn).unwrap()) / (2.0 * h);
            let directional = g.weighted_dot(&d).unwrap();
            assert!(
                (fd - directional).abs() <= 1e-6 * (1.0 + fd.abs()),
                "fd {fd} vs {directional}"
            );
        }
    }

    #[test]
    fn descent_lemma_holds_with_the_certified_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 8;
        let grid = unit_grid(n);
        let data: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let obj = QuadraticObjective::new(
            grid.clone(),
            Box::new(DenseMatrix::new(n, data).unwrap()),
            GridFunction::zeros(grid.clone()),
        )
        .unwrap();
        let lf = obj.lipschitz_bound();
        for _ in 0..20 {
            let u = GridFunction::new(grid.clone(), (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect());
            let v = GridFunction::new(grid.clone(), (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect());
            let g = obj.gradient(&u).unwrap();
            let mut diff = v.clone();
            for i in 0..n {
                diff.values_mut()[i] -= u.values()[i];
            }
            let rhs = obj.value(&u).unwrap()
                + g.weighted_dot(&diff).unwrap()
                + 0.5 * lf * diff.weighted_norm_sq();
            assert!(obj.value(&v).unwrap() <= rhs + 1e-10);
        }
    }
}
