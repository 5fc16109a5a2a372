//! Build problems from a configuration, run them, and write the outputs.

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use l0opt::grid::{Grid, GridFunction};
use l0opt::objective::{QuadraticObjective, SmoothObjective};
use l0opt::optimality::{check_noc, OptimalityReport};
use l0opt::poisson::{PoissonOptions, PoissonTracking};
use l0opt::prox::{run, Backtracking, ProxGradConfig, Trajectory};
use l0opt::separable::{brute_force_l0, solve_l0, L0Solution, QuadraticIntegrand};

use crate::config::{ExperimentConfig, FieldSpec, ProblemKind};

/// Exit statuses shared by the subcommands.
pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_VERIFY: i32 = 4;

/// Command-line overrides applied on top of the configuration file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub output_dir: Option<PathBuf>,
    pub max_iter: Option<usize>,
    pub quiet: bool,
}

enum CliError {
    /// Unusable input: bad config, missing files, malformed CSV.
    Usage(Vec<String>),
    /// The numerical solve itself failed.
    Solver(String),
    /// Verification ran but a residual exceeded its threshold.
    VerifyFailed(Vec<String>),
}

impl CliError {
    fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(vec![msg.into()])
    }
}

impl From<l0opt::Error> for CliError {
    fn from(err: l0opt::Error) -> Self {
        CliError::Solver(err.to_string())
    }
}

fn report_exit(result: Result<(), CliError>) -> i32 {
    match result {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(msgs)) => {
            for m in msgs {
                eprintln!("error: {m}");
            }
            EXIT_USAGE
        }
        Err(CliError::Solver(msg)) => {
            eprintln!("solver error: {msg}");
            EXIT_SOLVER
        }
        Err(CliError::VerifyFailed(msgs)) => {
            for m in msgs {
                eprintln!("verify: {m}");
            }
            EXIT_VERIFY
        }
    }
}

fn load_config(config_path: &Path) -> Result<(ExperimentConfig, PathBuf), CliError> {
    let text = fs::read_to_string(config_path)
        .map_err(|e| CliError::usage(format!("cannot read {config_path:?}: {e}")))?;
    let config = ExperimentConfig::from_json(&text).map_err(CliError::usage)?;
    let base_dir = config_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let problems = config.validate(&base_dir);
    if !problems.is_empty() {
        return Err(CliError::Usage(problems));
    }
    Ok((config, base_dir))
}

fn build_grid(config: &ExperimentConfig) -> Result<Arc<Grid>, CliError> {
    let g = &config.grid;
    let grid = match g.dim {
        1 => Grid::interval(g.extents[0][0], g.extents[0][1], g.resolution[0]),
        2 => Grid::rectangle(
            [g.extents[0], g.extents[1]],
            g.resolution[0],
            g.resolution[1],
        ),
        _ => unreachable!("validated"),
    };
    grid.map_err(|e| CliError::usage(e.to_string()))
}

fn materialize(
    spec: &FieldSpec,
    grid: &Arc<Grid>,
    rng: &mut ChaCha8Rng,
    base_dir: &Path,
) -> Result<GridFunction, CliError> {
    let n = grid.num_cells();
    match spec {
        FieldSpec::Zero => Ok(GridFunction::zeros(grid.clone())),
        FieldSpec::Spikes { count, amplitude } => {
            if *count == 0 || *count > n {
                return Err(CliError::usage(format!(
                    "spikes: count {count} out of range for {n} cells"
                )));
            }
            // partial Fisher-Yates for distinct seeded positions
            let mut idx: Vec<usize> = (0..n).collect();
            for k in 0..*count {
                let j = rng.gen_range(k..n);
                idx.swap(k, j);
            }
            let mut values = vec![0.0; n];
            for &cell in &idx[..*count] {
                values[cell] = if rng.gen_bool(0.5) {
                    *amplitude
                } else {
                    -*amplitude
                };
            }
            Ok(GridFunction::new(grid.clone(), values))
        }
        FieldSpec::RandomUniform { scale } => {
            if !(*scale > 0.0) {
                return Err(CliError::usage(format!(
                    "random-uniform: scale must be positive, got {scale}"
                )));
            }
            let values = (0..n).map(|_| rng.gen_range(-scale..*scale)).collect();
            Ok(GridFunction::new(grid.clone(), values))
        }
        FieldSpec::File { path } => {
            let full = base_dir.join(path);
            let file = fs::File::open(&full)
                .map_err(|e| CliError::usage(format!("cannot open {full:?}: {e}")))?;
            GridFunction::read_csv(grid.clone(), BufReader::new(file))
                .map_err(|e| CliError::usage(format!("{full:?}: {e}")))
        }
    }
}

/// The objective a config describes, with the field the generator drew for
/// the sparse-control case (kept for reporting).
struct BuiltObjective {
    objective: Box<dyn SmoothObjective>,
    alpha: f64,
}

fn build_objective(
    config: &ExperimentConfig,
    grid: &Arc<Grid>,
    rng: &mut ChaCha8Rng,
    base_dir: &Path,
) -> Result<BuiltObjective, CliError> {
    let alpha = config.objective.alpha;
    match config.problem {
        ProblemKind::Quadratic => {
            let b = materialize(&config.objective.target, grid, rng, base_dir)?;
            let objective = QuadraticObjective::identity(grid.clone(), b)
                .map_err(|e| CliError::Solver(e.to_string()))?;
            Ok(BuiltObjective {
                objective: Box::new(objective),
                alpha,
            })
        }
        ProblemKind::PoissonTracking => {
            let coeff = match &config.objective.coefficient {
                Some(spec) => Some(materialize(spec, grid, rng, base_dir)?),
                None => None,
            };
            let mut options = PoissonOptions::default();
            if let Some(tol) = config.objective.cg_tol {
                options.cg_tol = tol;
            }
            let y_d = match &config.objective.target {
                spikes @ FieldSpec::Spikes { .. } => {
                    // a spike target describes a sparse control whose state
                    // is tracked
                    let u_spikes = materialize(spikes, grid, rng, base_dir)?;
                    let probe = PoissonTracking::new(
                        GridFunction::zeros(grid.clone()),
                        coeff.clone(),
                        options.clone(),
                    )?;
                    probe.solve_state(&u_spikes)?
                }
                other => materialize(other, grid, rng, base_dir)?,
            };
            let objective = PoissonTracking::new(y_d, coeff, options)?;
            Ok(BuiltObjective {
                objective: Box::new(objective),
                alpha,
            })
        }
        ProblemKind::SeparableDirect => Err(CliError::usage(
            "separable-direct problems have no smooth objective; use `solve` or `oracle`",
        )),
    }
}

fn build_integrand(
    config: &ExperimentConfig,
    grid: &Arc<Grid>,
    rng: &mut ChaCha8Rng,
    base_dir: &Path,
) -> Result<QuadraticIntegrand, CliError> {
    let spec = config
        .integrand
        .as_ref()
        .expect("validated for separable-direct");
    if !(spec.curvature > 0.0) {
        return Err(CliError::usage(format!(
            "integrand.curvature: must be positive, got {}",
            spec.curvature
        )));
    }
    let linear = materialize(&spec.linear, grid, rng, base_dir)?;
    let centers = materialize(&spec.centers, grid, rng, base_dir)?;
    QuadraticIntegrand::new(
        linear.values().to_vec(),
        centers.values().to_vec(),
        spec.curvature,
    )
    .map_err(|e| CliError::usage(e.to_string()))
}

#[derive(Serialize)]
struct RunReport<'a> {
    kind: &'static str,
    termination: &'static str,
    iterations: usize,
    initial_objective: f64,
    final_objective: f64,
    lambda_final: Option<f64>,
    /// Smallest multiplier over the trailing window of iterations; left for
    /// interpretation, not asserted.
    lambda_tail_min: Option<f64>,
    lambda_tail_window: usize,
    lipschitz_bound: f64,
    l: f64,
    l_not_above_lipschitz: bool,
    optimality: &'a OptimalityReport,
}

#[derive(Serialize)]
struct DirectReport {
    kind: &'static str,
    objective: f64,
    lambda: f64,
    s: f64,
    support_measure: f64,
    tau: f64,
    max_cell_weight: f64,
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Solver(format!("cannot write {path:?}: {e}")))?;
    Ok(())
}

fn write_solution_csv(path: &Path, u: &GridFunction) -> Result<(), CliError> {
    let file = fs::File::create(path)
        .map_err(|e| CliError::Solver(format!("cannot create {path:?}: {e}")))?;
    let mut out = BufWriter::new(file);
    u.write_csv(&mut out)
        .map_err(|e| CliError::Solver(e.to_string()))?;
    out.flush()
        .map_err(|e| CliError::Solver(format!("cannot flush {path:?}: {e}")))?;
    Ok(())
}

fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> Result<(), CliError> {
    let file = fs::File::create(path)
        .map_err(|e| CliError::Solver(format!("cannot create {path:?}: {e}")))?;
    let mut out = BufWriter::new(file);
    traj.write_csv(&mut out)
        .map_err(|e| CliError::Solver(e.to_string()))?;
    out.flush()
        .map_err(|e| CliError::Solver(format!("cannot flush {path:?}: {e}")))?;
    Ok(())
}

fn direct_trajectory_csv(sol: &L0Solution) -> String {
    let mut text = String::from(
        "k,objective,lambda,step_norm_sq,support_measure,support_change,\
         descent_slack,away_slack,change_slack\n",
    );
    text.push_str(&format!(
        "0,{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
        sol.objective,
        sol.lambda,
        0.0,
        sol.support_measure,
        0.0,
        f64::NAN,
        f64::INFINITY,
        f64::NAN,
    ));
    text
}

fn resolve_prox_config(
    config: &ExperimentConfig,
    objective: &dyn SmoothObjective,
    overrides: &Overrides,
) -> ProxGradConfig {
    let s = &config.solver;
    let l = s.l.unwrap_or_else(|| s.l_factor * objective.lipschitz_bound());
    ProxGradConfig {
        l,
        alpha: config.objective.alpha,
        tau: s.tau,
        max_iter: overrides.max_iter.unwrap_or(s.max_iter),
        step_norm_tol: s.step_norm_tol,
        backtracking: match &s.backtracking {
            Some(bt) => Backtracking::On {
                initial_l: bt.initial_l,
                growth: bt.growth,
            },
            None => Backtracking::Off,
        },
        zero_tol: s.zero_tol,
    }
}

fn run_experiment_inner(config_path: &Path, overrides: &Overrides) -> Result<(), CliError> {
    let (config, base_dir) = load_config(config_path)?;
    let out_dir = overrides
        .output_dir
        .clone()
        .unwrap_or_else(|| base_dir.join(&config.output_dir));
    fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::Solver(format!("cannot create {out_dir:?}: {e}")))?;

    let grid = build_grid(&config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let echo = serde_json::to_string_pretty(&config).expect("config serializes");
    write_text(&out_dir.join("config_echo.json"), &echo)?;

    match config.problem {
        ProblemKind::SeparableDirect => {
            let integrand = build_integrand(&config, &grid, &mut rng, &base_dir)?;
            let sol = solve_l0(&integrand, &grid, config.solver.tau)?;
            write_solution_csv(&out_dir.join("solution.csv"), &sol.u)?;
            write_text(
                &out_dir.join("trajectory.csv"),
                &direct_trajectory_csv(&sol),
            )?;
            let report = DirectReport {
                kind: "separable-direct",
                objective: sol.objective,
                lambda: sol.lambda,
                s: sol.s,
                support_measure: sol.support_measure,
                tau: sol.tau,
                max_cell_weight: grid.max_weight(),
            };
            write_text(
                &out_dir.join("report.json"),
                &serde_json::to_string_pretty(&report).expect("report serializes"),
            )?;
            if !overrides.quiet {
                println!(
                    "separable-direct: objective {:.6e}, lambda {:.6e}, support {:.6e}",
                    sol.objective, sol.lambda, sol.support_measure
                );
                println!("outputs in {}", out_dir.display());
            }
        }
        ProblemKind::Quadratic | ProblemKind::PoissonTracking => {
            let built = build_objective(&config, &grid, &mut rng, &base_dir)?;
            let prox_config = resolve_prox_config(&config, built.objective.as_ref(), overrides);
            let u0 = GridFunction::zeros(grid.clone());
            let traj = run(&prox_config, built.objective.as_ref(), &u0)?;
            if traj.l_not_above_lipschitz && !overrides.quiet {
                eprintln!(
                    "warning: solver.l = {} does not exceed the certified Lipschitz \
                     bound {}; monotone descent is not guaranteed",
                    prox_config.l, traj.lipschitz_bound
                );
            }
            write_solution_csv(&out_dir.join("solution.csv"), &traj.final_u)?;
            write_trajectory_csv(&out_dir.join("trajectory.csv"), &traj)?;

            let optimality = check_noc(
                &traj.final_u,
                built.objective.as_ref(),
                built.alpha,
                prox_config.tau,
                traj.final_lambda(),
            )?;
            let window = 50.min(traj.records.len().max(1));
            let report = RunReport {
                kind: "prox-run",
                termination: traj.termination.as_str(),
                iterations: traj.records.len(),
                initial_objective: traj.initial_objective,
                final_objective: traj
                    .records
                    .last()
                    .map_or(traj.initial_objective, |r| r.objective),
                lambda_final: traj.final_lambda(),
                lambda_tail_min: traj.lambda_tail_min(window),
                lambda_tail_window: window,
                lipschitz_bound: traj.lipschitz_bound,
                l: traj.records.last().map_or(prox_config.l, |r| r.l),
                l_not_above_lipschitz: traj.l_not_above_lipschitz,
                optimality: &optimality,
            };
            write_text(
                &out_dir.join("report.json"),
                &serde_json::to_string_pretty(&report).expect("report serializes"),
            )?;
            if !overrides.quiet {
                println!(
                    "{}: {} iterations, termination {}, final objective {:.6e}",
                    match config.problem {
                        ProblemKind::Quadratic => "quadratic",
                        _ => "poisson-tracking",
                    },
                    report.iterations,
                    report.termination,
                    report.final_objective,
                );
                println!("outputs in {}", out_dir.display());
            }
        }
    }
    Ok(())
}

/// `solve <config>`: run the configured experiment and write
/// `trajectory.csv`, `solution.csv`, `report.json`, and `config_echo.json`.
pub fn run_experiment(config_path: &Path, overrides: &Overrides) -> i32 {
    report_exit(run_experiment_inner(config_path, overrides))
}

fn verify_inner(
    solution_path: &Path,
    config_path: &Path,
    overrides: &Overrides,
) -> Result<(), CliError> {
    let (config, base_dir) = load_config(config_path)?;
    if config.problem == ProblemKind::SeparableDirect {
        return Err(CliError::usage(
            "verify needs a smooth objective; separable-direct solutions are \
             checked with `oracle`",
        ));
    }
    let grid = build_grid(&config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let built = build_objective(&config, &grid, &mut rng, &base_dir)?;

    let file = fs::File::open(solution_path)
        .map_err(|e| CliError::usage(format!("cannot open {solution_path:?}: {e}")))?;
    let u = GridFunction::read_csv(grid.clone(), BufReader::new(file))
        .map_err(|e| CliError::usage(format!("{solution_path:?}: {e}")))?;

    let report = check_noc(&u, built.objective.as_ref(), built.alpha, config.solver.tau, None)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&report).expect("report serializes")
    );

    let tol = &config.verify_tolerances;
    let mut failures = Vec::new();
    if !report.feasible {
        failures.push(format!(
            "support measure {} exceeds the budget {}",
            report.support_measure, config.solver.tau
        ));
    }
    if report.stationarity_residual > tol.stationarity {
        failures.push(format!(
            "stationarity_residual {} exceeds {}",
            report.stationarity_residual, tol.stationarity
        ));
    }
    if let Some(r) = report.pointwise_comp_residual {
        if r > tol.pointwise_comp {
            failures.push(format!(
                "pointwise_comp_residual {} exceeds {}",
                r, tol.pointwise_comp
            ));
        }
    }
    if report.comp_tau_residual > tol.comp_tau {
        failures.push(format!(
            "comp_tau_residual {} exceeds {}",
            report.comp_tau_residual, tol.comp_tau
        ));
    }
    if failures.is_empty() {
        if !overrides.quiet {
            eprintln!("verify: all asserted residuals within tolerances");
        }
        Ok(())
    } else {
        Err(CliError::VerifyFailed(failures))
    }
}

/// `verify <solution> <config>`: print the optimality report for a stored
/// solution and gate the exit status on the configured tolerances.
pub fn verify(solution_path: &Path, config_path: &Path, overrides: &Overrides) -> i32 {
    report_exit(verify_inner(solution_path, config_path, overrides))
}

#[derive(Serialize)]
struct OracleReport {
    solve_objective: f64,
    brute_force_objective: f64,
    abs_difference: f64,
    supports_match: bool,
    lambda_solve: f64,
    lambda_brute_force: f64,
}

fn oracle_inner(config_path: &Path, overrides: &Overrides) -> Result<(), CliError> {
    let (config, base_dir) = load_config(config_path)?;
    let grid = build_grid(&config)?;
    if grid.num_cells() > 20 {
        return Err(CliError::usage(format!(
            "grid.resolution: oracle comparison enumerates subsets and is \
             limited to 20 cells, got {}",
            grid.num_cells()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let tau = config.solver.tau;
    let integrand = match config.problem {
        ProblemKind::SeparableDirect => build_integrand(&config, &grid, &mut rng, &base_dir)?,
        ProblemKind::Quadratic | ProblemKind::PoissonTracking => {
            // first prox subproblem from a zero start
            let built = build_objective(&config, &grid, &mut rng, &base_dir)?;
            let prox_config = resolve_prox_config(&config, built.objective.as_ref(), overrides);
            let grad0 = built
                .objective
                .gradient(&GridFunction::zeros(grid.clone()))?;
            let q = prox_config.l + prox_config.alpha;
            let centers: Vec<f64> = grad0.values().iter().map(|g| -g / q).collect();
            QuadraticIntegrand::centered(centers, q).map_err(CliError::from)?
        }
    };
    let fast = solve_l0(&integrand, &grid, tau)?;
    let brute = brute_force_l0(&integrand, &grid, tau)?;
    let report = OracleReport {
        solve_objective: fast.objective,
        brute_force_objective: brute.objective,
        abs_difference: (fast.objective - brute.objective).abs(),
        supports_match: fast.support.flags() == brute.support.flags(),
        lambda_solve: fast.lambda,
        lambda_brute_force: brute.lambda,
    };
    println!(
        "{}",
        serde_json::to_string_pretty(&report).expect("report serializes")
    );
    if report.abs_difference <= 1e-12 {
        Ok(())
    } else {
        Err(CliError::VerifyFailed(vec![format!(
            "threshold solver and brute force disagree by {}",
            report.abs_difference
        )]))
    }
}

/// `oracle <config>`: compare the threshold solver against exhaustive
/// enumeration on a small instance.
pub fn oracle(config_path: &Path, overrides: &Overrides) -> i32 {
    report_exit(oracle_inner(config_path, overrides))
}
