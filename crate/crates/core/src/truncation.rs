//! Localization operators and the a.s. bound constants of the backward
//! scheme: state / increment clamps, the C_y and C_z constants, and the
//! Gaussian tail mass removed by clamping an increment.

use crate::error::{invalid, Result};
use crate::problem::{Problem, TimeGrid};

/// Truncation radii and the derived a.s. bound constants.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct TruncationSpec {
    /// Per-component state radius R_X (clamp to [-R_X, R_X]).
    pub r_x: Vec<f64>,
    /// Brownian increment radius R_w (clamp to +/- R_w sqrt(delta)); may be
    /// infinite to disable the clamp.
    pub r_w: f64,
    /// A.s. bound C_y on the regressed value.
    pub c_y: f64,
    /// C_z at step i equals c_z_scale / sqrt(delta_i).
    pub c_z_scale: f64,
}

impl TruncationSpec {
    /// Spec with all clamps disabled. Used by the no-truncation ablation.
    pub fn disabled(dim_x: usize) -> Self {
        Self {
            r_x: vec![f64::INFINITY; dim_x],
            r_w: f64::INFINITY,
            c_y: f64::INFINITY,
            c_z_scale: f64::INFINITY,
        }
    }

    pub fn c_z(&self, delta: f64) -> f64 {
        self.c_z_scale / delta.sqrt()
    }
}

/// The a.s. bound constants given the truncation radius.
///
/// For a problem with a running reward (L_f > 0):
///   C   = 3 L_f^2 (q + |pi|) + 1/q
///   C_f = L_f (|R_X| + A-bar) + |f(0,0,0,0)|
///   C_y = e^{CT/2} sqrt(C_g^2 + e^{C|pi|}/L_f^2 * C_f^2)
/// For f = 0 the recursion carries no C_f term and the bound degenerates to
/// C_y = e^{CT/2} C_g with C evaluated at L_f = 0.
/// In both cases C_z at step i is sqrt(q)/sqrt(delta_i) * C_y.
pub fn compute_bounds(problem: &Problem, grid: &TimeGrid, r_x: &[f64]) -> Result<TruncationSpec> {
    compute_bounds_with_rw(problem, grid, r_x, 6.0)
}

pub fn compute_bounds_with_rw(
    problem: &Problem,
    grid: &TimeGrid,
    r_x: &[f64],
    r_w: f64,
) -> Result<TruncationSpec> {
    if r_x.len() != problem.dim_x {
        return Err(invalid("truncation radius has wrong dimension"));
    }
    if r_x.iter().any(|r| *r < 0.0 || r.is_nan()) {
        return Err(invalid("truncation radii must be nonnegative"));
    }
    let q = problem.dim_w as f64;
    let mesh = grid.mesh();
    let horizon = problem.horizon;
    let lf = problem.lip_f;
    let c_g = terminal_bound(problem, r_x)?;

    let c_y = if lf > 0.0 {
        let c = 3.0 * lf * lf * (q + mesh) + 1.0 / q;
        let r_norm = r_x.iter().map(|r| r * r).sum::<f64>().sqrt();
        let c_f = lf * (r_norm + problem.controls.radius()) + problem.f_at_origin.abs();
        ((c * horizon) / 2.0).exp() * (c_g * c_g + (c * mesh).exp() / (lf * lf) * c_f * c_f).sqrt()
    } else {
        let c = 1.0 / q;
        ((c * horizon) / 2.0).exp() * c_g
    };

    Ok(TruncationSpec {
        r_x: r_x.to_vec(),
        r_w,
        c_y,
        c_z_scale: q.sqrt() * c_y,
    })
}

/// Max of |g| over the truncation box, by dense grid evaluation plus corners.
/// Only implemented for d <= 2; higher-dimensional problems must supply their
/// own bound.
fn terminal_bound(problem: &Problem, r_x: &[f64]) -> Result<f64> {
    const POINTS: usize = 1024;
    let d = problem.dim_x;
    if d > 2 {
        return Err(invalid(
            "terminal bound scan only supports dim_x <= 2; supply C_g directly",
        ));
    }
    let g = &problem.terminal_reward;
    let axis = |k: usize| -> Vec<f64> {
        let r = r_x[k];
        if !r.is_finite() {
            return vec![0.0];
        }
        (0..=POINTS).map(|j| -r + 2.0 * r * j as f64 / POINTS as f64).collect()
    };
    let mut best = 0.0f64;
    match d {
        1 => {
            for v in axis(0) {
                best = best.max(g(&[v]).abs());
            }
        }
        _ => {
            let (ax, ay) = (axis(0), axis(1));
            for x in &ax {
                for y in &ay {
                    best = best.max(g(&[*x, *y]).abs());
                }
            }
        }
    }
    Ok(best)
}

/// Default truncation radii read off the simulated paths: per state
/// component, |mean| + 6 empirical standard deviations of X_T.
pub fn default_radii(paths: &crate::randomization::RandomizedPathSet) -> Vec<f64> {
    let n = paths.grid.steps();
    let m = paths.paths as f64;
    (0..paths.dim_x)
        .map(|k| {
            let mean = (0..paths.paths).map(|p| paths.state(p, n)[k]).sum::<f64>() / m;
            let var = (0..paths.paths)
                .map(|p| (paths.state(p, n)[k] - mean).powi(2))
                .sum::<f64>()
                / (m - 1.0).max(1.0);
            mean.abs() + 6.0 * var.sqrt()
        })
        .collect()
}

/// Componentwise clamp of the state to [-R_X, R_X].
pub fn truncate_state(x: &[f64], spec: &TruncationSpec) -> Vec<f64> {
    x.iter()
        .zip(&spec.r_x)
        .map(|(v, r)| if r.is_finite() { v.clamp(-r, *r) } else { *v })
        .collect()
}

/// Componentwise clamp of a Brownian increment to +/- R_w sqrt(delta).
pub fn truncate_increment(dw: &[f64], delta: f64, spec: &TruncationSpec) -> Vec<f64> {
    if !spec.r_w.is_finite() {
        return dw.to_vec();
    }
    let bound = spec.r_w * delta.sqrt();
    dw.iter().map(|v| v.clamp(-bound, bound)).collect()
}

/// Clamp a regressed value to +/- C_y.
#[inline]
pub fn truncate_y(v: f64, spec: &TruncationSpec) -> f64 {
    if spec.c_y.is_finite() {
        v.clamp(-spec.c_y, spec.c_y)
    } else {
        v
    }
}

/// Clamp the delta_i * Z regression output to +/- delta_i C_z componentwise.
pub fn truncate_z(v: &[f64], delta: f64, spec: &TruncationSpec) -> Vec<f64> {
    let bound = delta * spec.c_z(delta);
    if !bound.is_finite() {
        return v.to_vec();
    }
    v.iter().map(|c| c.clamp(-bound, bound)).collect()
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal survival function P(N > x).
pub fn normal_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// Second moment of the clamping error, T_R = E[(N - clamp(N, +/-R))^2].
///
/// Closed form from expanding the square:
///   T_R = 2 R^2 P(N > R) - 4 R E[N 1{N>R}] + 2 E[N^2 1{N>R}]
/// with E[N 1{N>R}] = phi(R) and E[N^2 1{N>R}] = R phi(R) + P(N > R).
pub fn gaussian_tail(r: f64) -> f64 {
    assert!(r >= 0.0, "radius must be nonnegative");
    let sf = normal_sf(r);
    let pdf = (-r * r / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
    2.0 * r * r * sf - 4.0 * r * pdf + 2.0 * (r * pdf + sf)
}

/// The Mill's-ratio bound sqrt(2/pi) e^{-R^2/2} / R on T_R (for R > 0).
pub fn gaussian_tail_bound(r: f64) -> f64 {
    (2.0 / std::f64::consts::PI).sqrt() * (-r * r / 2.0).exp() / r
}
