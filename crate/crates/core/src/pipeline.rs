//! End-to-end run: simulate the randomized forward pair, derive truncation
//! bounds, solve backward, re-evaluate the policy on fresh paths and combine
//! the estimates. Shared by the CLI and the acceptance tests.

use std::time::Instant;

use crate::error::Result;
use crate::evaluator::{evaluate_policy, mid_estimate, EstimateReport};
use crate::problem::{Problem, TimeGrid};
use crate::randomization::{simulate, RngPolicy};
use crate::regression::BasisSpec;
use crate::solver::{backward_solve, BackwardResult, SolverOptions};
use crate::truncation::{compute_bounds, default_radii, TruncationSpec};

#[derive(Clone, Debug)]
pub struct RunSettings {
    pub paths: usize,
    pub steps: usize,
    pub seed: u64,
    /// Jump intensity of the randomized control; `None` means 2 / T.
    pub intensity: Option<f64>,
    /// Disable all localization clamps (ablation).
    pub no_truncation: bool,
    pub solver: SolverOptions,
}

impl RunSettings {
    pub fn new(paths: usize, steps: usize, seed: u64) -> Self {
        Self { paths, steps, seed, intensity: None, no_truncation: false, solver: SolverOptions::default() }
    }
}

/// Everything produced by one run.
pub struct RunOutput {
    pub report: EstimateReport,
    pub backward: BackwardResult,
    pub trunc: TruncationSpec,
    pub upper_corner_fraction: f64,
}

/// One full solve + evaluate at a single (M, N).
pub fn run_once(
    problem: &Problem,
    basis: &BasisSpec,
    settings: &RunSettings,
    ref_value: Option<f64>,
) -> Result<RunOutput> {
    let start = Instant::now();
    let grid = TimeGrid::uniform(problem.horizon, settings.steps)?;
    let rng = RngPolicy::new(settings.seed);
    let intensity = settings.intensity.unwrap_or(2.0 / problem.horizon);

    let paths = simulate(problem, &grid, settings.paths, &rng, intensity)?;
    let trunc = if settings.no_truncation {
        TruncationSpec::disabled(problem.dim_x)
    } else {
        compute_bounds(problem, &grid, &default_radii(&paths))?
    };
    let backward = backward_solve(&paths, problem, basis, &trunc, settings.solver)?;
    let eval = evaluate_policy(problem, &backward.policy, &grid, settings.paths, &rng)?;

    let report = EstimateReport {
        problem: problem.name.clone(),
        basis: basis.name.clone(),
        paths: settings.paths,
        steps: settings.steps,
        seed: settings.seed,
        p1: backward.p1,
        p1_stderr: backward.p1_stderr,
        p2: eval.p2,
        p2_stderr: eval.p2_stderr,
        mid: mid_estimate(backward.p1, eval.p2),
        runtime_s: start.elapsed().as_secs_f64(),
        ref_value,
    };
    Ok(RunOutput { report, backward, trunc, upper_corner_fraction: eval.upper_corner_fraction })
}
