//! Forward simulation of the pair (X, I): a pure-jump randomized control I
//! driven by a Poisson random measure with uniform marks on the control box,
//! and the Euler-discretized regime-switching diffusion X.
//!
//! Every path draws from its own counter-derived substream, so a simulation
//! is bit-identical for a given master seed regardless of thread count.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::problem::{Problem, TimeGrid};

/// Purpose tag baked into a substream id so that the solver, the policy
/// evaluation and fixed-control pricing never share draws.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StreamLabel {
    ControlJumps = 1,
    BrownianIncrements = 2,
    Evaluation = 3,
    FixedControl = 4,
}

/// Reproducible per-path random stream derivation.
#[derive(Clone, Copy, Debug)]
pub struct RngPolicy {
    pub master_seed: u64,
}

impl RngPolicy {
    pub fn new(master_seed: u64) -> Self {
        Self { master_seed }
    }

    /// Stream for one (label, path) pair. Draws depend only on the master
    /// seed, the label and the path index.
    pub fn stream(&self, label: StreamLabel, path: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(((label as u64) << 48) | path);
        rng
    }
}

/// Randomized control component: per-path values of I sampled at the grid
/// knots, plus the jump intensity used.
#[derive(Clone, Debug)]
pub struct ControlPaths {
    pub grid: TimeGrid,
    pub paths: usize,
    pub dim_a: usize,
    /// M x (N+1) x dim_a, row-major.
    pub values: Vec<f64>,
    /// Number of jumps of the marked point process on [0, T], per path.
    pub jump_counts: Vec<u32>,
    pub intensity: f64,
}

impl ControlPaths {
    #[inline]
    pub fn at(&self, path: usize, knot: usize) -> &[f64] {
        let w = (self.grid.steps() + 1) * self.dim_a;
        let off = path * w + knot * self.dim_a;
        &self.values[off..off + self.dim_a]
    }
}

/// Simulated forward trajectories of (X, I) with the Brownian increments
/// exactly as consumed by the Euler steps.
#[derive(Clone, Debug)]
pub struct RandomizedPathSet {
    pub grid: TimeGrid,
    pub paths: usize,
    pub dim_x: usize,
    pub dim_a: usize,
    pub dim_w: usize,
    /// M x (N+1) x dim_x
    pub x: Vec<f64>,
    /// M x (N+1) x dim_a
    pub i_ctrl: Vec<f64>,
    /// M x N x dim_w
    pub dw: Vec<f64>,
    pub seed: u64,
    pub intensity: f64,
}

impl RandomizedPathSet {
    #[inline]
    pub fn state(&self, path: usize, knot: usize) -> &[f64] {
        let w = (self.grid.steps() + 1) * self.dim_x;
        let off = path * w + knot * self.dim_x;
        &self.x[off..off + self.dim_x]
    }

    #[inline]
    pub fn control(&self, path: usize, knot: usize) -> &[f64] {
        let w = (self.grid.steps() + 1) * self.dim_a;
        let off = path * w + knot * self.dim_a;
        &self.i_ctrl[off..off + self.dim_a]
    }

    #[inline]
    pub fn increment(&self, path: usize, step: usize) -> &[f64] {
        let w = self.grid.steps() * self.dim_w;
        let off = path * w + step * self.dim_w;
        &self.dw[off..off + self.dim_w]
    }

    /// Columnar text dump (one row per (path, knot)) for debugging.
    pub fn dump(&self, out: &mut dyn Write) -> Result<()> {
        let n = self.grid.steps();
        write!(out, "m,t")?;
        for k in 0..self.dim_x {
            write!(out, ",x{k}")?;
        }
        for k in 0..self.dim_a {
            write!(out, ",i{k}")?;
        }
        for k in 0..self.dim_w {
            write!(out, ",dw{k}")?;
        }
        writeln!(out)?;
        for m in 0..self.paths {
            for i in 0..=n {
                write!(out, "{m},{}", self.grid.knots()[i])?;
                for v in self.state(m, i) {
                    write!(out, ",{v}")?;
                }
                for v in self.control(m, i) {
                    write!(out, ",{v}")?;
                }
                if i < n {
                    for v in self.increment(m, i) {
                        write!(out, ",{v}")?;
                    }
                } else {
                    for _ in 0..self.dim_w {
                        write!(out, ",")?;
                    }
                }
                writeln!(out)?;
            }
        }
        Ok(())
    }
}

/// Sample the randomized control I on the grid knots.
///
/// Per path: I_0 uniform on the box, inter-jump times Exponential(intensity),
/// marks uniform on the box; knot values follow the right-constant process.
pub fn simulate_control(
    problem: &Problem,
    grid: &TimeGrid,
    paths: usize,
    rng: &RngPolicy,
    intensity: f64,
) -> Result<ControlPaths> {
    if intensity <= 0.0 || !intensity.is_finite() {
        return Err(invalid("jump intensity must be positive"));
    }
    if paths == 0 {
        return Err(invalid("need at least one path"));
    }
    let dim_a = problem.controls.dim();
    let n = grid.steps();
    let horizon = grid.horizon();
    let knots = grid.knots().to_vec();
    let lower = problem.controls.lower().to_vec();
    let upper = problem.controls.upper().to_vec();
    let singleton = problem.controls.is_singleton();

    let mut values = vec![0.0; paths * (n + 1) * dim_a];
    let mut jump_counts = vec![0u32; paths];
    let exp = Exp::new(intensity).expect("positive intensity");

    values
        .par_chunks_mut((n + 1) * dim_a)
        .zip(jump_counts.par_iter_mut())
        .enumerate()
        .for_each(|(m, (path_vals, jumps))| {
            let mut r = rng.stream(StreamLabel::ControlJumps, m as u64);
            let draw_mark = |r: &mut ChaCha8Rng, out: &mut [f64]| {
                for ((slot, lo), hi) in out.iter_mut().zip(&lower).zip(&upper) {
                    *slot = if lo == hi { *lo } else { r.random_range(*lo..*hi) };
                }
            };
            let mut current = vec![0.0; dim_a];
            draw_mark(&mut r, &mut current);
            if singleton {
                for knot in 0..=n {
                    path_vals[knot * dim_a..(knot + 1) * dim_a].copy_from_slice(&current);
                }
                return;
            }
            let mut t = exp.sample(&mut r);
            let mut next_mark = vec![0.0; dim_a];
            for (knot_idx, knot_t) in knots.iter().enumerate() {
                // advance the jump clock past this knot; the knot takes the
                // value of the right-constant process
                while t <= *knot_t && t <= horizon {
                    draw_mark(&mut r, &mut next_mark);
                    current.copy_from_slice(&next_mark);
                    *jumps += 1;
                    t += exp.sample(&mut r);
                }
                path_vals[knot_idx * dim_a..(knot_idx + 1) * dim_a].copy_from_slice(&current);
            }
            // jumps after the last knot still count towards the [0, T] tally
            while t <= horizon {
                *jumps += 1;
                t += exp.sample(&mut r);
            }
        });

    Ok(ControlPaths { grid: grid.clone(), paths, dim_a, values, jump_counts, intensity })
}

/// Euler step of X along the sampled controls, recording the Brownian
/// increments exactly as consumed.
pub fn simulate_forward(
    problem: &Problem,
    controls: &ControlPaths,
    rng: &RngPolicy,
) -> Result<RandomizedPathSet> {
    if controls.dim_a != problem.controls.dim() {
        return Err(invalid("control dimension does not match problem"));
    }
    let grid = controls.grid.clone();
    let n = grid.steps();
    let paths = controls.paths;
    let (d, qa, qw) = (problem.dim_x, controls.dim_a, problem.dim_w);

    let mut x = vec![0.0; paths * (n + 1) * d];
    let mut dw = vec![0.0; paths * n * qw];
    let deltas: Vec<f64> = (0..n).map(|i| grid.delta(i)).collect();
    let x0 = problem.initial_state.clone();
    let drift = problem.drift.clone();
    let diffusion = problem.diffusion.clone();

    x.par_chunks_mut((n + 1) * d)
        .zip(dw.par_chunks_mut(n * qw))
        .enumerate()
        .for_each(|(m, (xs, dws))| {
            let mut r = rng.stream(StreamLabel::BrownianIncrements, m as u64);
            xs[..d].copy_from_slice(&x0);
            let mut b = vec![0.0; d];
            let mut sigma = vec![0.0; d * qw];
            for i in 0..n {
                let delta = deltas[i];
                let sqrt_delta = delta.sqrt();
                for k in 0..qw {
                    let z: f64 = StandardNormal.sample(&mut r);
                    dws[i * qw + k] = z * sqrt_delta;
                }
                let (head, tail) = xs.split_at_mut((i + 1) * d);
                let xi = &head[i * d..];
                let a = &controls.values[m * (n + 1) * qa + i * qa..][..qa];
                drift(xi, a, &mut b);
                diffusion(xi, a, &mut sigma);
                let xnext = &mut tail[..d];
                for row in 0..d {
                    let mut v = xi[row] + b[row] * delta;
                    for k in 0..qw {
                        v += sigma[row * qw + k] * dws[i * qw + k];
                    }
                    xnext[row] = v;
                }
            }
        });

    Ok(RandomizedPathSet {
        grid,
        paths,
        dim_x: d,
        dim_a: qa,
        dim_w: qw,
        x,
        i_ctrl: controls.values.clone(),
        dw,
        seed: rng.master_seed,
        intensity: controls.intensity,
    })
}

/// Convenience wrapper: sample controls then the diffusion.
pub fn simulate(
    problem: &Problem,
    grid: &TimeGrid,
    paths: usize,
    rng: &RngPolicy,
    intensity: f64,
) -> Result<RandomizedPathSet> {
    let controls = simulate_control(problem, grid, paths, rng, intensity)?;
    simulate_forward(problem, &controls, rng)
}
