//! The second estimator: re-simulate fresh paths under the extracted
//! feedback policy and average the realized reward, plus the mid-estimate
//! combining it with the backward value.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::problem::{Problem, TimeGrid};
use crate::randomization::{RngPolicy, StreamLabel};
use crate::solver::PolicyTable;

/// Result of one policy evaluation run.
#[derive(Clone, Copy, Debug)]
pub struct PolicyEvaluation {
    pub p2: f64,
    pub p2_stderr: f64,
    /// Fraction of (path, step) decisions that sit on the upper corner of
    /// the control box in every component.
    pub upper_corner_fraction: f64,
}

/// Full report of one solve + evaluate run; one CSV row.
#[derive(Clone, Debug)]
pub struct EstimateReport {
    pub problem: String,
    pub basis: String,
    pub paths: usize,
    pub steps: usize,
    pub seed: u64,
    pub p1: f64,
    pub p1_stderr: f64,
    pub p2: f64,
    pub p2_stderr: f64,
    pub mid: f64,
    pub runtime_s: f64,
    pub ref_value: Option<f64>,
}

/// The combined estimate max(p2, (p1 + p2) / 2): the average when the
/// backward estimate sits above the simulated one (the expected ordering),
/// and the simulated one alone otherwise.
pub fn mid_estimate(p1: f64, p2: f64) -> f64 {
    p2.max(0.5 * (p1 + p2))
}

/// Simulate fresh paths with the feedback control applied at every step and
/// average the realized rewards.
pub fn evaluate_policy(
    problem: &Problem,
    policy: &PolicyTable,
    grid: &TimeGrid,
    paths: usize,
    rng: &RngPolicy,
) -> Result<PolicyEvaluation> {
    if grid != &policy.grid {
        return Err(invalid("evaluation grid does not match the policy grid"));
    }
    if paths == 0 {
        return Err(invalid("need at least one path"));
    }
    run_paths(problem, grid, paths, rng, StreamLabel::Evaluation, |step, x| {
        policy.control_at(step, x)
    })
}

/// Plain Monte Carlo value under a constant control.
pub fn evaluate_fixed_control(
    problem: &Problem,
    a: &[f64],
    grid: &TimeGrid,
    paths: usize,
    rng: &RngPolicy,
) -> Result<PolicyEvaluation> {
    if !problem.controls.contains(a) {
        return Err(invalid("fixed control lies outside the control box"));
    }
    if paths == 0 {
        return Err(invalid("need at least one path"));
    }
    let a = a.to_vec();
    run_paths(problem, grid, paths, rng, StreamLabel::FixedControl, move |_step, _x| a.clone())
}

fn run_paths(
    problem: &Problem,
    grid: &TimeGrid,
    paths: usize,
    rng: &RngPolicy,
    label: StreamLabel,
    control: impl Fn(usize, &[f64]) -> Vec<f64> + Sync,
) -> Result<PolicyEvaluation> {
    let n = grid.steps();
    let d = problem.dim_x;
    let qw = problem.dim_w;
    let deltas: Vec<f64> = (0..n).map(|i| grid.delta(i)).collect();
    let upper = problem.controls.upper().to_vec();

    let results: Vec<(f64, u64)> = (0..paths)
        .into_par_iter()
        .map(|m| {
            let mut r = rng.stream(label, m as u64);
            let mut x = problem.initial_state.clone();
            let mut xnext = vec![0.0; d];
            let mut b = vec![0.0; d];
            let mut sigma = vec![0.0; d * qw];
            let mut dw = vec![0.0; qw];
            let zero_z = vec![0.0; qw];
            let mut reward = 0.0;
            let mut at_upper = 0u64;
            for i in 0..n {
                let a = control(i, &x);
                if a.iter().zip(&upper).all(|(v, u)| (v - u).abs() < 1e-12) {
                    at_upper += 1;
                }
                let sqrt_delta = deltas[i].sqrt();
                for slot in dw.iter_mut() {
                    let z: f64 = StandardNormal.sample(&mut r);
                    *slot = z * sqrt_delta;
                }
                (problem.drift)(&x, &a, &mut b);
                (problem.diffusion)(&x, &a, &mut sigma);
                for row in 0..d {
                    let mut v = x[row] + b[row] * deltas[i];
                    for k in 0..qw {
                        v += sigma[row * qw + k] * dw[k];
                    }
                    xnext[row] = v;
                }
                x.copy_from_slice(&xnext);
                reward += problem.running_reward(&x, &a, 0.0, &zero_z) * deltas[i];
            }
            reward += (problem.terminal_reward)(&x);
            (reward, at_upper)
        })
        .collect();

    let rewards: Vec<f64> = results.iter().map(|(r, _)| *r).collect();
    if rewards.iter().any(|v| !v.is_finite()) {
        return Err(invalid("non-finite pathwise reward in policy evaluation"));
    }
    let mean = rewards.iter().sum::<f64>() / paths as f64;
    let var = rewards.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (paths.max(2) - 1) as f64;
    let decisions = (paths * n) as f64;
    let at_upper: u64 = results.iter().map(|(_, c)| *c).sum();
    Ok(PolicyEvaluation {
        p2: mean,
        p2_stderr: (var / paths as f64).sqrt(),
        upper_corner_fraction: at_upper as f64 / decisions,
    })
}
