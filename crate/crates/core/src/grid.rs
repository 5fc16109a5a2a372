//! Weighted grids, grid functions, and indicators.
//!
//! A [`Grid`] is a finite measure space: an ordered list of cells, each with
//! a positive weight and a coordinate. A [`GridFunction`] holds one real
//! value per cell; an [`Indicator`] one flag per cell. All norms and measures
//! are weighted by the cell weights and accumulate through the deterministic
//! pairwise reductions of [`crate::exec`].

use std::io::{BufRead, Write};
use std::sync::Arc;

use crate::exec;
use crate::{Error, Result};

/// Lattice structure of a grid, when it has one.
///
/// The uniform constructors record this so that stencil-based operators can
/// recover neighbor relations; grids built from raw weights carry `None`.
#[derive(Debug, Clone, PartialEq)]
pub enum Lattice {
    /// `n` interior nodes of an interval split into `n + 1` subintervals of
    /// length `h`; node `i` sits at `origin + (i + 1) * h`.
    Interval { n: usize, h: f64, origin: f64 },
    /// Interior nodes of a rectangle, row-major with `x` fastest: node
    /// `(i, j)` has index `j * nx + i` and coordinate
    /// `(origin + (i + 1) hx, origin_y + (j + 1) hy)`.
    Rect {
        nx: usize,
        ny: usize,
        hx: f64,
        hy: f64,
        origin: [f64; 2],
    },
}

/// A discretized measure space: ordered cells with positive weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    dim: usize,
    weights: Vec<f64>,
    coords: Vec<[f64; 2]>,
    total_measure: f64,
    max_weight: f64,
    lattice: Option<Lattice>,
}

impl Grid {
    /// Grid over the `n` interior nodes of the interval `(a, b)` split into
    /// `n + 1` equal subintervals. Every cell has weight `h = (b - a)/(n+1)`,
    /// so the total measure is `n * h`, slightly less than `b - a`; the two
    /// boundary nodes belong to the Dirichlet boundary and carry no cell.
    pub fn interval(a: f64, b: f64, n: usize) -> Result<Arc<Grid>> {
        if !(b > a) || !a.is_finite() || !b.is_finite() {
            return Err(Error::InvalidGrid(format!(
                "interval ({a}, {b}) is not a proper finite interval"
            )));
        }
        if n == 0 {
            return Err(Error::InvalidGrid("interval grid needs n >= 1".into()));
        }
        let h = (b - a) / (n + 1) as f64;
        let weights = vec![h; n];
        let coords = (0..n).map(|i| [a + (i + 1) as f64 * h, 0.0]).collect();
        Ok(Arc::new(Self::assemble(
            1,
            weights,
            coords,
            Some(Lattice::Interval { n, h, origin: a }),
        )?))
    }

    /// Grid over the interior nodes of the rectangle
    /// `(ax, bx) x (ay, by)`, with `nx` and `ny` interior nodes per
    /// dimension. Cells are ordered row-major with `x` fastest.
    pub fn rectangle(extents: [[f64; 2]; 2], nx: usize, ny: usize) -> Result<Arc<Grid>> {
        let [[ax, bx], [ay, by]] = extents;
        if !(bx > ax) || !(by > ay) {
            return Err(Error::InvalidGrid(format!(
                "rectangle extents ({ax}, {bx}) x ({ay}, {by}) are not proper"
            )));
        }
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidGrid("rectangle grid needs nx, ny >= 1".into()));
        }
        let hx = (bx - ax) / (nx + 1) as f64;
        let hy = (by - ay) / (ny + 1) as f64;
        let w = hx * hy;
        let mut coords = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                coords.push([ax + (i + 1) as f64 * hx, ay + (j + 1) as f64 * hy]);
            }
        }
        Ok(Arc::new(Self::assemble(
            2,
            vec![w; nx * ny],
            coords,
            Some(Lattice::Rect {
                nx,
                ny,
                hx,
                hy,
                origin: [ax, ay],
            }),
        )?))
    }

    /// General weighted grid, mainly for tests and hand-built instances.
    /// Coordinates default to the cell index.
    pub fn from_weights(weights: Vec<f64>) -> Result<Arc<Grid>> {
        let coords = (0..weights.len()).map(|i| [i as f64, 0.0]).collect();
        Ok(Arc::new(Self::assemble(1, weights, coords, None)?))
    }

    fn assemble(
        dim: usize,
        weights: Vec<f64>,
        coords: Vec<[f64; 2]>,
        lattice: Option<Lattice>,
    ) -> Result<Grid> {
        if weights.is_empty() {
            return Err(Error::InvalidGrid("a grid needs at least one cell".into()));
        }
        if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidGrid(
                "every cell weight must be positive and finite".into(),
            ));
        }
        let total_measure = exec::pairwise_sum(&weights);
        let max_weight = weights.iter().cloned().fold(0.0, f64::max);
        Ok(Grid {
            dim,
            weights,
            coords,
            total_measure,
            max_weight,
            lattice,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_cells(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, cell: usize) -> f64 {
        self.weights[cell]
    }

    /// Coordinate of a cell; the second component is 0 for 1D grids.
    pub fn coord(&self, cell: usize) -> [f64; 2] {
        self.coords[cell]
    }

    /// Sum of all cell weights.
    pub fn total_measure(&self) -> f64 {
        self.total_measure
    }

    /// Largest single cell weight. This is the granularity below which the
    /// support budget cannot be resolved.
    pub fn max_weight(&self) -> f64 {
        self.max_weight
    }

    pub fn lattice(&self) -> Option<&Lattice> {
        self.lattice.as_ref()
    }

    /// True when all cells have the same weight (bitwise).
    pub fn has_uniform_weights(&self) -> bool {
        self.weights.iter().all(|w| *w == self.weights[0])
    }
}

pub(crate) fn same_grid(a: &Arc<Grid>, b: &Arc<Grid>) -> bool {
    Arc::ptr_eq(a, b) || **a == **b
}

/// Default tolerance below which a value counts as zero: scales with the
/// largest magnitude present so that exact zeros stay exact.
pub fn default_zero_tol(values: &[f64]) -> f64 {
    let max = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    1e-12 * (1.0 + max)
}

/// One real value per grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl GridFunction {
    /// Wrap values over a grid.
    ///
    /// Panics if the value count does not match the cell count; that is a
    /// programming error, not a data error.
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Self {
        assert_eq!(
            values.len(),
            grid.num_cells(),
            "value count must match cell count"
        );
        GridFunction { grid, values }
    }

    pub fn zeros(grid: Arc<Grid>) -> Self {
        let n = grid.num_cells();
        GridFunction {
            grid,
            values: vec![0.0; n],
        }
    }

    pub fn from_fn<F: Fn(usize) -> f64 + Sync + Send>(grid: Arc<Grid>, f: F) -> Self {
        let values = exec::map_values(grid.num_cells(), f);
        GridFunction { grid, values }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Measure of the set where `|u| > zero_tol`.
    pub fn l0_measure(&self, zero_tol: f64) -> f64 {
        let w = self.grid.weights();
        let v = &self.values;
        exec::pairwise_sum_by(v.len(), |i| if v[i].abs() > zero_tol { w[i] } else { 0.0 })
    }

    /// Weighted squared norm `sum_i w_i u_i^2`.
    pub fn weighted_norm_sq(&self) -> f64 {
        let w = self.grid.weights();
        let v = &self.values;
        exec::pairwise_sum_by(v.len(), |i| w[i] * v[i] * v[i])
    }

    /// Weighted norm.
    pub fn weighted_norm(&self) -> f64 {
        self.weighted_norm_sq().sqrt()
    }

    /// Weighted inner product with another function on the same grid.
    pub fn weighted_dot(&self, other: &GridFunction) -> Result<f64> {
        if !same_grid(&self.grid, &other.grid) {
            return Err(Error::GridMismatch);
        }
        let w = self.grid.weights();
        let a = &self.values;
        let b = &other.values;
        Ok(exec::pairwise_sum_by(a.len(), |i| w[i] * a[i] * b[i]))
    }

    /// Largest absolute value.
    pub fn linf_norm(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Indicator of the set where `|u| > zero_tol`.
    pub fn support(&self, zero_tol: f64) -> Indicator {
        let flags = self.values.iter().map(|v| v.abs() > zero_tol).collect();
        Indicator {
            grid: self.grid.clone(),
            flags,
        }
    }

    /// Weighted squared distance to another function on the same grid.
    pub fn dist_sq(&self, other: &GridFunction) -> Result<f64> {
        if !same_grid(&self.grid, &other.grid) {
            return Err(Error::GridMismatch);
        }
        let w = self.grid.weights();
        let a = &self.values;
        let b = &other.values;
        Ok(exec::pairwise_sum_by(a.len(), |i| {
            let d = a[i] - b[i];
            w[i] * d * d
        }))
    }

    /// Write as CSV: `index,x[,y],value` with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        if self.grid.dim() == 2 {
            writeln!(out, "index,x,y,value")?;
            for (i, v) in self.values.iter().enumerate() {
                let [x, y] = self.grid.coord(i);
                writeln!(out, "{i},{x:.16e},{y:.16e},{v:.16e}")?;
            }
        } else {
            writeln!(out, "index,x,value")?;
            for (i, v) in self.values.iter().enumerate() {
                let [x, _] = self.grid.coord(i);
                writeln!(out, "{i},{x:.16e},{v:.16e}")?;
            }
        }
        Ok(())
    }

    /// Read values written by [`GridFunction::write_csv`] back onto `grid`.
    /// Coordinates in the file are ignored; rows must be in index order.
    pub fn read_csv<R: BufRead>(grid: Arc<Grid>, input: R) -> Result<Self> {
        let mut values = Vec::with_capacity(grid.num_cells());
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if lineno == 0 && line.starts_with("index") {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            let (idx_str, val_str) = match (fields.first(), fields.last()) {
                (Some(i), Some(v)) if fields.len() >= 3 => (*i, *v),
                _ => {
                    return Err(Error::Parse(format!(
                        "line {}: expected at least 3 comma-separated fields",
                        lineno + 1
                    )))
                }
            };
            let idx: usize = idx_str
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("line {}: bad index {idx_str:?}", lineno + 1)))?;
            if idx != values.len() {
                return Err(Error::Parse(format!(
                    "line {}: index {idx} out of order (expected {})",
                    lineno + 1,
                    values.len()
                )));
            }
            let val: f64 = val_str.trim().parse().map_err(|_| {
                Error::Parse(format!("line {}: bad value {val_str:?}", lineno + 1))
            })?;
            values.push(val);
        }
        if values.len() != grid.num_cells() {
            return Err(Error::Parse(format!(
                "expected {} rows, found {}",
                grid.num_cells(),
                values.len()
            )));
        }
        Ok(GridFunction::new(grid, values))
    }
}

/// One boolean flag per grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Indicator {
    grid: Arc<Grid>,
    flags: Vec<bool>,
}

impl Indicator {
    pub fn new(grid: Arc<Grid>, flags: Vec<bool>) -> Self {
        assert_eq!(
            flags.len(),
            grid.num_cells(),
            "flag count must match cell count"
        );
        Indicator { grid, flags }
    }

    pub fn empty(grid: Arc<Grid>) -> Self {
        let n = grid.num_cells();
        Indicator {
            grid,
            flags: vec![false; n],
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    pub fn contains(&self, cell: usize) -> bool {
        self.flags[cell]
    }

    /// Sum of weights over flagged cells.
    pub fn measure(&self) -> f64 {
        let w = self.grid.weights();
        let f = &self.flags;
        exec::pairwise_sum_by(f.len(), |i| if f[i] { w[i] } else { 0.0 })
    }

    /// Weighted L1 distance: sum of weights where the flags differ.
    pub fn l1_distance(&self, other: &Indicator) -> Result<f64> {
        if !same_grid(&self.grid, &other.grid) {
            return Err(Error::GridMismatch);
        }
        let w = self.grid.weights();
        let (a, b) = (&self.flags, &other.flags);
        Ok(exec::pairwise_sum_by(a.len(), |i| {
            if a[i] != b[i] {
                w[i]
            } else {
                0.0
            }
        }))
    }
}
