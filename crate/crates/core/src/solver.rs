//! The backward scheme: per-step regression of the continuation value (and
//! of Y * dW for the Z component), argmax over the control box, truncations.
//! Produces the upper-flavored estimate P1 and the feedback policy table.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::problem::{ControlBox, Problem, TimeGrid};
use crate::randomization::RandomizedPathSet;
use crate::regression::{
    evaluate, fit, fit_surface, BasisSpec, ControlStructure, DesignMatrix, GaussNewtonOptions,
    RegressionFit,
};
use crate::truncation::{truncate_increment, truncate_state, truncate_y, truncate_z, TruncationSpec};

/// Fitted coefficients of one backward time step.
#[derive(Clone, Debug)]
pub struct PolicyStep {
    pub y_fit: RegressionFit,
    /// One linear fit per Brownian component, present when Z was regressed.
    pub z_fits: Option<Vec<RegressionFit>>,
}

/// The parametric feedback policy: per-step coefficients plus everything
/// needed to re-evaluate the argmax rule. Immutable once built.
#[derive(Clone, Debug)]
pub struct PolicyTable {
    pub problem_name: String,
    pub basis: BasisSpec,
    pub controls: ControlBox,
    pub grid: TimeGrid,
    pub trunc: TruncationSpec,
    /// steps[i] covers the interval [t_i, t_{i+1}); length N.
    pub steps: Vec<PolicyStep>,
}

impl PolicyTable {
    /// Feedback control at (step i, state x).
    pub fn control_at(&self, step: usize, x: &[f64]) -> Vec<f64> {
        argmax_control(&self.steps[step].y_fit, &self.basis, &self.controls, x)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SolverOptions {
    /// Fit Z regressions even when the running reward ignores z.
    pub force_z_fits: bool,
    /// Evaluate the fitted surface at the sampled control I_i instead of
    /// maximizing over the box. Ablation only; the optimized value should
    /// dominate this one.
    pub skip_optimization: bool,
    pub gauss_newton: GaussNewtonOptions,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            force_z_fits: false,
            skip_optimization: false,
            gauss_newton: GaussNewtonOptions::default(),
        }
    }
}

/// Result of the backward pass.
#[derive(Clone, Debug)]
pub struct BackwardResult {
    /// Value of the optimized time-0 regression surface at the initial state.
    pub p1: f64,
    /// Sample mean of the per-path time-0 values, with its standard error.
    pub p1_path_mean: f64,
    pub p1_stderr: f64,
    pub policy: PolicyTable,
}

/// Backward induction over the simulated path set.
///
/// For i = N-1 .. 0: optionally regress each component of Y_{i+1} [dW_i]_w
/// on the basis and truncate to obtain Z_i; regress the target
/// Y_{i+1} + f([X_i]_X, I_i, Y_{i+1}, Z_i) delta_i on p(X_i, I_i); then per
/// path take the sup of the fitted surface over the control box and clamp
/// with [.]_y.
pub fn backward_solve(
    paths: &RandomizedPathSet,
    problem: &Problem,
    basis: &BasisSpec,
    trunc: &TruncationSpec,
    opts: SolverOptions,
) -> Result<BackwardResult> {
    let m = paths.paths;
    let n = paths.grid.steps();
    let b = basis.count();
    let qw = paths.dim_w;
    let fit_z = opts.force_z_fits || problem.reward_depends_on_z;

    // terminal condition Y_N = g([X_N]_X)
    let mut y: Vec<f64> = (0..m)
        .into_par_iter()
        .map(|p| (problem.terminal_reward)(&truncate_state(paths.state(p, n), trunc)))
        .collect();
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "terminal reward", step: n });
    }

    let mut steps: Vec<PolicyStep> = Vec::with_capacity(n);
    let mut warm: Option<Vec<f64>> = None;

    for i in (0..n).rev() {
        let delta = paths.grid.delta(i);

        // feature rows and sigmoid scales at (X_i, I_i), shared by the Z and
        // Y fits of this step
        let mut rows = vec![0.0; m * b];
        let mut scales = vec![0.0; m];
        rows.par_chunks_mut(b)
            .zip(scales.par_iter_mut())
            .enumerate()
            .for_each(|(p, (row, scale))| {
                let x = paths.state(p, i);
                basis.fill_row(x, paths.control(p, i), row);
                *scale = basis.scale(x);
            });
        let design = DesignMatrix::new(m, b, rows)?;

        let (z_fits, z_values) = if fit_z {
            let mut fits = Vec::with_capacity(qw);
            for k in 0..qw {
                let targets: Vec<f64> = (0..m)
                    .into_par_iter()
                    .map(|p| {
                        let dwc = truncate_increment(paths.increment(p, i), delta, trunc);
                        y[p] * dwc[k]
                    })
                    .collect();
                fits.push(fit(&design, &targets)?);
            }
            // per-path Z_i from the truncated delta_i * Z regression output
            let values: Vec<f64> = (0..m)
                .into_par_iter()
                .flat_map_iter(|p| {
                    let raw: Vec<f64> = fits
                        .iter()
                        .map(|f| {
                            design.row(p).iter().zip(&f.coefficients).map(|(v, c)| v * c).sum()
                        })
                        .collect();
                    truncate_z(&raw, delta, trunc).into_iter().map(move |v| v / delta)
                })
                .collect();
            (Some(fits), Some(values))
        } else {
            (None, None)
        };

        // regression target Y_{i+1} + f([X_i]_X, I_i, Y_{i+1}, Z_i) delta_i
        let zero_z = vec![0.0; qw];
        let targets: Vec<f64> = (0..m)
            .into_par_iter()
            .map(|p| {
                let z = match &z_values {
                    Some(zs) => &zs[p * qw..(p + 1) * qw],
                    None => &zero_z[..],
                };
                let xt = truncate_state(paths.state(p, i), trunc);
                y[p] + problem.running_reward(&xt, paths.control(p, i), y[p], z) * delta
            })
            .collect();

        let y_fit = fit_surface(basis, &design, &scales, &targets, warm.as_deref(), opts.gauss_newton)?;
        warm = Some(y_fit.coefficients.clone());

        // per-path sup of the fitted surface, then the [.]_y clamp
        y.par_iter_mut().enumerate().for_each(|(p, slot)| {
            let x = paths.state(p, i);
            let value = if opts.skip_optimization {
                evaluate(&y_fit, basis, x, paths.control(p, i))
            } else {
                let a_star = sup_control(&y_fit, basis, &problem.controls, x);
                evaluate(&y_fit, basis, x, &a_star)
            };
            *slot = truncate_y(value, trunc);
        });
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "backward value", step: i });
        }

        steps.push(PolicyStep { y_fit, z_fits });
    }
    steps.reverse();

    let policy = PolicyTable {
        problem_name: problem.name.clone(),
        basis: basis.clone(),
        controls: problem.controls.clone(),
        grid: paths.grid.clone(),
        trunc: trunc.clone(),
        steps,
    };

    let mean = y.iter().sum::<f64>() / m as f64;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m.max(2) - 1) as f64;
    let x0 = &problem.initial_state;
    let a0 = sup_control(&policy.steps[0].y_fit, basis, &problem.controls, x0);
    let p1 = truncate_y(evaluate(&policy.steps[0].y_fit, basis, x0, &a0), trunc);

    Ok(BackwardResult { p1, p1_path_mean: mean, p1_stderr: (var / m as f64).sqrt(), policy })
}

/// Maximizer of the fitted surface over the control box at state x.
///
/// Quadratic bases use the closed-form vertex (with a concavity check),
/// linear bases compare the box corners (bang-bang), and the general case
/// runs a grid scan refined by golden-section search, coordinate-cyclic for
/// multiple control dimensions. Monotone output transforms do not move the
/// argmax, so everything operates on the inner linear combination.
pub fn argmax_control(
    fit: &RegressionFit,
    basis: &BasisSpec,
    controls: &ControlBox,
    x: &[f64],
) -> Vec<f64> {
    if controls.is_singleton() {
        return controls.lower().to_vec();
    }
    let inner = |a: &[f64]| basis.inner(&fit.coefficients, x, a);
    let q = controls.dim();
    match basis.control_structure {
        ControlStructure::LinearInA => {
            let mut best = controls.lower().to_vec();
            let mut best_val = inner(&best);
            for corner in controls.corners().into_iter().skip(1) {
                let v = inner(&corner);
                // strict comparison ties to the lower corner
                if v > best_val {
                    best_val = v;
                    best = corner;
                }
            }
            best
        }
        ControlStructure::QuadraticInA => {
            let sweeps = if q == 1 { 1 } else { 2 };
            let mut a = midpoint(controls);
            for _ in 0..sweeps {
                for k in 0..q {
                    a[k] = quadratic_line_max(&inner, &a, k, controls.lower()[k], controls.upper()[k], true);
                }
            }
            controls.clamp(&mut a);
            a
        }
        ControlStructure::General => {
            let sweeps = if q == 1 { 1 } else { 2 };
            let mut a = midpoint(controls);
            for _ in 0..sweeps {
                for k in 0..q {
                    a[k] = golden_line_max(&inner, &a, k, controls.lower()[k], controls.upper()[k]);
                }
            }
            controls.clamp(&mut a);
            a
        }
    }
}

/// Control achieving the per-path sup inside the backward recursion.
///
/// For quadratic-in-a bases this is the closed-form vertex without the box
/// clamp: clamping makes the maximized surface piecewise in x (kinked where
/// the vertex leaves the box), which a global polynomial basis cannot
/// represent, and on randomized paths that misfit feeds a growing bias back
/// through the recursion. The unclamped vertex keeps the maximized surface
/// inside the span of the basis. The stored feedback policy ([`argmax_control`])
/// still clamps, so re-simulation always uses admissible controls.
fn sup_control(fit: &RegressionFit, basis: &BasisSpec, controls: &ControlBox, x: &[f64]) -> Vec<f64> {
    if controls.is_singleton() || !matches!(basis.control_structure, ControlStructure::QuadraticInA) {
        return argmax_control(fit, basis, controls, x);
    }
    let inner = |a: &[f64]| basis.inner(&fit.coefficients, x, a);
    let q = controls.dim();
    let sweeps = if q == 1 { 1 } else { 2 };
    let mut a = midpoint(controls);
    for _ in 0..sweeps {
        for k in 0..q {
            a[k] = quadratic_line_max(&inner, &a, k, controls.lower()[k], controls.upper()[k], false);
        }
    }
    a
}

fn midpoint(controls: &ControlBox) -> Vec<f64> {
    controls
        .lower()
        .iter()
        .zip(controls.upper())
        .map(|(lo, hi)| 0.5 * (lo + hi))
        .collect()
}

/// Exact maximizer along coordinate k of a function quadratic in that
/// coordinate, probed at three points. With `clamp` off the concave vertex
/// is returned even when it lies outside [lo, hi].
fn quadratic_line_max(
    inner: &dyn Fn(&[f64]) -> f64,
    a: &[f64],
    k: usize,
    lo: f64,
    hi: f64,
    clamp: bool,
) -> f64 {
    if lo == hi {
        return lo;
    }
    let mid = 0.5 * (lo + hi);
    let mut probe = a.to_vec();
    let mut g = |v: f64| {
        probe[k] = v;
        inner(&probe)
    };
    let (glo, gmid, ghi) = (g(lo), g(mid), g(hi));
    // Lagrange second difference; exact for quadratics
    let c2 = ((ghi - gmid) / (hi - mid) - (gmid - glo) / (mid - lo)) / (hi - lo);
    if c2 < 0.0 {
        let c1 = (ghi - glo) / (hi - lo) - c2 * (hi + lo);
        let vertex = -c1 / (2.0 * c2);
        if clamp {
            vertex.clamp(lo, hi)
        } else {
            vertex
        }
    } else if glo >= ghi {
        lo
    } else {
        hi
    }
}

const GRID_POINTS: usize = 33;
const GOLDEN_ITERS: usize = 20;

/// Grid scan plus golden-section refinement along coordinate k.
fn golden_line_max(inner: &dyn Fn(&[f64]) -> f64, a: &[f64], k: usize, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        return lo;
    }
    let mut probe = a.to_vec();
    let mut g = |v: f64| {
        probe[k] = v;
        inner(&probe)
    };
    let mut best_idx = 0;
    let mut best_val = f64::NEG_INFINITY;
    let at = |j: usize| lo + (hi - lo) * j as f64 / (GRID_POINTS - 1) as f64;
    for j in 0..GRID_POINTS {
        let v = g(at(j));
        if v > best_val {
            best_val = v;
            best_idx = j;
        }
    }
    let mut left = at(best_idx.saturating_sub(1));
    let mut right = at((best_idx + 1).min(GRID_POINTS - 1));
    let phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let mut x1 = right - phi * (right - left);
    let mut x2 = left + phi * (right - left);
    let (mut f1, mut f2) = (g(x1), g(x2));
    for _ in 0..GOLDEN_ITERS {
        if f1 < f2 {
            left = x1;
            x1 = x2;
            f1 = f2;
            x2 = left + phi * (right - left);
            f2 = g(x2);
        } else {
            right = x2;
            x2 = x1;
            f2 = f1;
            x1 = right - phi * (right - left);
            f1 = g(x1);
        }
    }
    let mid = 0.5 * (left + right);
    // keep an exact boundary optimum instead of a near-boundary interior point
    let best_grid = at(best_idx);
    if g(best_grid) >= g(mid) {
        best_grid
    } else {
        mid
    }
}

/// Z component at (step i, state x), evaluated at the optimal control.
pub fn extract_z(policy: &PolicyTable, step: usize, x: &[f64]) -> Result<Vec<f64>> {
    let z_fits = policy.steps[step]
        .z_fits
        .as_ref()
        .ok_or_else(|| Error::NotAvailable("Z regressions were not fitted for this policy".into()))?;
    let a_star = policy.control_at(step, x);
    let delta = policy.grid.delta(step);
    let raw: Vec<f64> = z_fits
        .iter()
        .map(|f| policy.basis.inner(&f.coefficients, x, &a_star))
        .collect();
    Ok(truncate_z(&raw, delta, &policy.trunc)
        .into_iter()
        .map(|v| v / delta)
        .collect())
}
