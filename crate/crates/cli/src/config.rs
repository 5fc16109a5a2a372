//! Experiment configuration: a single JSON file describing the problem,
//! the grid, and the solver parameters.

use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    /// `f(u) = (1/2) ||u - b||^2` with `b` from the target spec.
    Quadratic,
    /// Poisson-constrained tracking of a target state.
    PoissonTracking,
    /// One exact solve of a separable quadratic integrand; no iteration.
    SeparableDirect,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// 1 or 2.
    pub dim: usize,
    /// One `[lo, hi]` pair per dimension.
    pub extents: Vec<[f64; 2]>,
    /// Cells per dimension; at least 2 each.
    pub resolution: Vec<usize>,
}

/// Source of a per-cell field (targets, linear terms, centers).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FieldSpec {
    Zero,
    /// `count` distinct cells at seeded positions, values `+-amplitude`.
    Spikes { count: usize, amplitude: f64 },
    /// Independent uniform draws from `[-scale, scale]`.
    RandomUniform { scale: f64 },
    /// A CSV written by the solution/grid-function exporter.
    File { path: String },
}

impl Default for FieldSpec {
    fn default() -> Self {
        FieldSpec::Zero
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSpec {
    /// Tikhonov weight on `||u||^2`.
    #[serde(default)]
    pub alpha: f64,
    /// For `quadratic`: the tracking vector `b`. For `poisson-tracking`:
    /// `zero` and `file` give the target state directly, while `spikes`
    /// builds a control with that sparsity and tracks its state.
    #[serde(default)]
    pub target: FieldSpec,
    /// Diffusion coefficient for `poisson-tracking`.
    #[serde(default)]
    pub coefficient: Option<FieldSpec>,
    /// Override for the inner CG tolerance.
    #[serde(default)]
    pub cg_tol: Option<f64>,
}

impl Default for ObjectiveSpec {
    fn default() -> Self {
        ObjectiveSpec {
            alpha: 0.0,
            target: FieldSpec::Zero,
            coefficient: None,
            cg_tol: None,
        }
    }
}

/// Integrand for `separable-direct`: `g(x, u) = a(x) u + (q/2)(u - c(x))^2`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegrandSpec {
    #[serde(default = "default_curvature")]
    pub curvature: f64,
    #[serde(default)]
    pub linear: FieldSpec,
    #[serde(default)]
    pub centers: FieldSpec,
}

fn default_curvature() -> f64 {
    1.0
}

impl Default for IntegrandSpec {
    fn default() -> Self {
        IntegrandSpec {
            curvature: 1.0,
            linear: FieldSpec::Zero,
            centers: FieldSpec::Zero,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BacktrackingSpec {
    pub initial_l: f64,
    pub growth: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    /// Support budget, in measure units of the grid.
    pub tau: f64,
    /// Prox parameter. Absent means `l_factor` times the certified
    /// Lipschitz bound of the objective.
    #[serde(default)]
    pub l: Option<f64>,
    #[serde(default = "default_l_factor")]
    pub l_factor: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_step_norm_tol")]
    pub step_norm_tol: f64,
    #[serde(default)]
    pub backtracking: Option<BacktrackingSpec>,
    #[serde(default)]
    pub zero_tol: f64,
}

fn default_l_factor() -> f64 {
    1.1
}

fn default_max_iter() -> usize {
    1000
}

fn default_step_norm_tol() -> f64 {
    1e-10
}

/// Residual thresholds used by the `verify` subcommand.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyTolerances {
    #[serde(default = "default_stationarity_tol")]
    pub stationarity: f64,
    #[serde(default = "default_pointwise_comp_tol")]
    pub pointwise_comp: f64,
    #[serde(default = "default_comp_tau_tol")]
    pub comp_tau: f64,
}

fn default_stationarity_tol() -> f64 {
    1e-6
}

fn default_pointwise_comp_tol() -> f64 {
    1e-8
}

fn default_comp_tau_tol() -> f64 {
    1e-12
}

impl Default for VerifyTolerances {
    fn default() -> Self {
        VerifyTolerances {
            stationarity: default_stationarity_tol(),
            pointwise_comp: default_pointwise_comp_tol(),
            comp_tau: default_comp_tau_tol(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemKind,
    pub grid: GridSpec,
    #[serde(default)]
    pub objective: ObjectiveSpec,
    pub solver: SolverSpec,
    /// For `separable-direct` only.
    #[serde(default)]
    pub integrand: Option<IntegrandSpec>,
    /// Seed for the builtin field generators.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    #[serde(default)]
    pub verify_tolerances: VerifyTolerances,
}

fn default_output_dir() -> String {
    "out".into()
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| format!("config parse error: {e}"))
    }

    /// Structural validation; returns one message per offending field.
    pub fn validate(&self, base_dir: &Path) -> Vec<String> {
        let mut problems = Vec::new();
        if self.grid.dim != 1 && self.grid.dim != 2 {
            problems.push(format!("grid.dim: must be 1 or 2, got {}", self.grid.dim));
        }
        if self.grid.extents.len() != self.grid.dim {
            problems.push(format!(
                "grid.extents: expected {} entries, got {}",
                self.grid.dim,
                self.grid.extents.len()
            ));
        }
        if self.grid.resolution.len() != self.grid.dim {
            problems.push(format!(
                "grid.resolution: expected {} entries, got {}",
                self.grid.dim,
                self.grid.resolution.len()
            ));
        }
        for (d, r) in self.grid.resolution.iter().enumerate() {
            if *r < 2 {
                problems.push(format!(
                    "grid.resolution[{d}]: must be at least 2, got {r}"
                ));
            }
        }
        for (d, [lo, hi]) in self.grid.extents.iter().enumerate() {
            if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
                problems.push(format!(
                    "grid.extents[{d}]: [{lo}, {hi}] is not a proper interval"
                ));
            }
        }
        if !(self.objective.alpha >= 0.0) {
            problems.push(format!(
                "objective.alpha: must be nonnegative, got {}",
                self.objective.alpha
            ));
        }
        if let Some(total) = self.grid_total_measure() {
            if !(self.solver.tau > 0.0 && self.solver.tau < total) {
                problems.push(format!(
                    "solver.tau: must lie strictly between 0 and the total grid \
                     measure {total}, got {}",
                    self.solver.tau
                ));
            }
        }
        if let Some(l) = self.solver.l {
            if !(l > 0.0) {
                problems.push(format!("solver.l: must be positive, got {l}"));
            }
        } else if !(self.solver.l_factor > 0.0) {
            problems.push(format!(
                "solver.l_factor: must be positive, got {}",
                self.solver.l_factor
            ));
        }
        if self.solver.max_iter == 0 {
            problems.push("solver.max_iter: must be at least 1".into());
        }
        if !(self.solver.step_norm_tol >= 0.0) {
            problems.push(format!(
                "solver.step_norm_tol: must be nonnegative, got {}",
                self.solver.step_norm_tol
            ));
        }
        if let Some(bt) = &self.solver.backtracking {
            if !(bt.initial_l > 0.0) {
                problems.push(format!(
                    "solver.backtracking.initial_l: must be positive, got {}",
                    bt.initial_l
                ));
            }
            if !(bt.growth > 1.0) {
                problems.push(format!(
                    "solver.backtracking.growth: must exceed 1, got {}",
                    bt.growth
                ));
            }
        }
        if self.problem == ProblemKind::SeparableDirect && self.integrand.is_none() {
            problems.push("integrand: required for separable-direct problems".into());
        }
        let mut check_file = |field: &str, spec: &FieldSpec| {
            if let FieldSpec::File { path } = spec {
                if !base_dir.join(path).exists() {
                    problems.push(format!("{field}: file {path:?} does not exist"));
                }
            }
        };
        check_file("objective.target", &self.objective.target);
        if let Some(coeff) = &self.objective.coefficient {
            check_file("objective.coefficient", coeff);
        }
        if let Some(integrand) = &self.integrand {
            check_file("integrand.linear", &integrand.linear);
            check_file("integrand.centers", &integrand.centers);
        }
        problems
    }

    /// Total measure of the configured grid, when the grid spec is sound.
    pub fn grid_total_measure(&self) -> Option<f64> {
        if self.grid.extents.len() != self.grid.dim
            || self.grid.resolution.len() != self.grid.dim
        {
            return None;
        }
        match self.grid.dim {
            1 => {
                let [lo, hi] = self.grid.extents[0];
                let n = self.grid.resolution[0];
                if hi > lo && n >= 1 {
                    let h = (hi - lo) / (n + 1) as f64;
                    Some(n as f64 * h)
                } else {
                    None
                }
            }
            2 => {
                let [lx, hx] = self.grid.extents[0];
                let [ly, hy] = self.grid.extents[1];
                let (nx, ny) = (self.grid.resolution[0], self.grid.resolution[1]);
                if hx > lx && hy > ly && nx >= 1 && ny >= 1 {
                    let sx = (hx - lx) / (nx + 1) as f64;
                    let sy = (hy - ly) / (ny + 1) as f64;
                    Some((nx * ny) as f64 * sx * sy)
                } else {
                    None
                }
            }
            _ => None,
        }
    }

    /// Canned configurations used by tests and shipped under `configs/`.
    pub fn builtin(name: &str) -> Option<ExperimentConfig> {
        let grid_1d = |n: usize| GridSpec {
            dim: 1,
            extents: vec![[0.0, 1.0]],
            resolution: vec![n],
        };
        match name {
            "quadratic-zero" => Some(ExperimentConfig {
                problem: ProblemKind::Quadratic,
                grid: grid_1d(32),
                objective: ObjectiveSpec {
                    alpha: 0.5,
                    ..Default::default()
                },
                solver: SolverSpec {
                    tau: 0.3,
                    l: None,
                    l_factor: 1.1,
                    max_iter: 200,
                    step_norm_tol: 1e-12,
                    backtracking: None,
                    zero_tol: 0.0,
                },
                integrand: None,
                seed: 0,
                output_dir: "out".into(),
                verify_tolerances: VerifyTolerances::default(),
            }),
            "spike-recovery-1d" => Some(ExperimentConfig {
                problem: ProblemKind::PoissonTracking,
                grid: grid_1d(64),
                objective: ObjectiveSpec {
                    alpha: 1e-4,
                    target: FieldSpec::Spikes {
                        count: 3,
                        amplitude: 5.0,
                    },
                    ..Default::default()
                },
                solver: SolverSpec {
                    tau: 0.12,
                    l: None,
                    l_factor: 1.1,
                    max_iter: 500,
                    step_norm_tol: 1e-12,
                    backtracking: None,
                    zero_tol: 0.0,
                },
                integrand: None,
                seed: 7,
                output_dir: "out".into(),
                verify_tolerances: VerifyTolerances::default(),
            }),
            "separable-direct-small" => Some(ExperimentConfig {
                problem: ProblemKind::SeparableDirect,
                grid: grid_1d(12),
                objective: ObjectiveSpec::default(),
                solver: SolverSpec {
                    tau: 0.4,
                    l: Some(1.0),
                    l_factor: 1.1,
                    max_iter: 1,
                    step_norm_tol: 0.0,
                    backtracking: None,
                    zero_tol: 0.0,
                },
                integrand: Some(IntegrandSpec {
                    curvature: 1.5,
                    linear: FieldSpec::RandomUniform { scale: 2.0 },
                    centers: FieldSpec::RandomUniform { scale: 1.0 },
                }),
                seed: 99,
                output_dir: "out".into(),
                verify_tolerances: VerifyTolerances::default(),
            }),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_configs_validate() {
        for name in ["quadratic-zero", "spike-recovery-1d", "separable-direct-small"] {
            let config = ExperimentConfig::builtin(name).unwrap();
            let problems = config.validate(Path::new("."));
            assert!(problems.is_empty(), "{name}: {problems:?}");
        }
        assert!(ExperimentConfig::builtin("no-such").is_none());
    }

    #[test]
    fn bad_tau_is_reported_with_the_field_name() {
        let mut config = ExperimentConfig::builtin("quadratic-zero").unwrap();
        config.solver.tau = 10.0;
        let problems = config.validate(Path::new("."));
        assert!(problems.iter().any(|p| p.starts_with("solver.tau")));
    }

    #[test]
    fn config_round_trips_through_json() {
        let config = ExperimentConfig::builtin("spike-recovery-1d").unwrap();
        let text = serde_json::to_string_pretty(&config).unwrap();
        let back = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(serde_json::to_string(&back).unwrap(), serde_json::to_string(&config).unwrap());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = r#"{"problem":"quadratic","grid":{"dim":1,"extents":[[0,1]],"resolution":[8]},"solver":{"tau":0.1},"bogus":1}"#;
        assert!(ExperimentConfig::from_json(text).is_err());
    }
}
