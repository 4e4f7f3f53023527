//! Stochastic control problem definition: coefficients, rewards, control set
//! and the Lipschitz data needed by the localization bounds.

use std::fmt;
use std::sync::Arc;

use crate::error::{invalid, Result};

/// Drift b(x, a), written into `out` (length `dim_x`).
pub type DriftFn = Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;
/// Diffusion sigma(x, a), written into `out` row-major (`dim_x` x `dim_w`).
pub type DiffusionFn = Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;
/// Running reward f(x, a, y, z).
pub type RunningRewardFn = Arc<dyn Fn(&[f64], &[f64], f64, &[f64]) -> f64 + Send + Sync>;
/// Terminal reward g(x).
pub type TerminalRewardFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Compact box of admissible controls.
#[derive(Clone, Debug)]
pub struct ControlBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl ControlBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(invalid("control box bounds must have equal nonzero length"));
        }
        for (lo, hi) in lower.iter().zip(&upper) {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(invalid(format!("bad control bounds [{lo}, {hi}]")));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn singleton(point: Vec<f64>) -> Result<Self> {
        Self::new(point.clone(), point)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn is_singleton(&self) -> bool {
        self.lower == self.upper
    }

    pub fn contains(&self, a: &[f64]) -> bool {
        a.len() == self.dim()
            && a.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    /// Componentwise clamp into the box.
    pub fn clamp(&self, a: &mut [f64]) {
        for (v, (lo, hi)) in a.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(*lo, *hi);
        }
    }

    /// Upper bound on |a| over the box (the constant A-bar of the a.s. bounds).
    pub fn radius(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| lo.abs().max(hi.abs()).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// All 2^q corners, lower corner first. Used by the bang-bang argmax.
    pub fn corners(&self) -> Vec<Vec<f64>> {
        let q = self.dim();
        (0..1usize << q)
            .map(|mask| {
                (0..q)
                    .map(|k| if mask >> k & 1 == 1 { self.upper[k] } else { self.lower[k] })
                    .collect()
            })
            .collect()
    }
}

/// The control problem data: dynamics, rewards, horizon and the constants
/// feeding the truncation bounds. Immutable after construction and cheap to
/// clone (the coefficient functions are shared).
#[derive(Clone)]
pub struct Problem {
    pub name: String,
    pub dim_x: usize,
    pub dim_w: usize,
    pub initial_state: Vec<f64>,
    pub drift: DriftFn,
    pub diffusion: DiffusionFn,
    /// `None` encodes f = 0.
    pub running_reward: Option<RunningRewardFn>,
    /// Whether f actually reads its z argument; controls whether the backward
    /// pass fits Z regressions.
    pub reward_depends_on_z: bool,
    pub terminal_reward: TerminalRewardFn,
    pub horizon: f64,
    pub controls: ControlBox,
    pub lip_f: f64,
    pub lip_g: f64,
    pub f_at_origin: f64,
}

impl fmt::Debug for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Problem")
            .field("name", &self.name)
            .field("dim_x", &self.dim_x)
            .field("dim_w", &self.dim_w)
            .field("horizon", &self.horizon)
            .field("controls", &self.controls)
            .finish_non_exhaustive()
    }
}

impl Problem {
    pub fn validate(&self) -> Result<()> {
        if self.horizon <= 0.0 {
            return Err(invalid("horizon must be positive"));
        }
        if self.dim_x == 0 || self.dim_w == 0 {
            return Err(invalid("state and noise dimensions must be at least 1"));
        }
        if self.initial_state.len() != self.dim_x {
            return Err(invalid("initial state has wrong dimension"));
        }
        if self.lip_f < 0.0 || self.lip_g < 0.0 {
            return Err(invalid("Lipschitz constants must be nonnegative"));
        }
        Ok(())
    }

    pub fn running_reward(&self, x: &[f64], a: &[f64], y: f64, z: &[f64]) -> f64 {
        match &self.running_reward {
            Some(f) => f(x, a, y, z),
            None => 0.0,
        }
    }

    /// Sign-flipped problem: solving the sup of the negated problem and
    /// negating the result yields the inf (subreplication) value.
    pub fn negated(&self) -> Problem {
        let mut p = self.clone();
        p.name = format!("{}_inf", self.name);
        if let Some(f) = &self.running_reward {
            let f = f.clone();
            p.running_reward = Some(Arc::new(move |x, a, y, z| -f(x, a, -y, z)));
        }
        let g = self.terminal_reward.clone();
        p.terminal_reward = Arc::new(move |x| -g(x));
        p
    }
}

/// Deterministic time grid 0 = t_0 < ... < t_N = T.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeGrid {
    knots: Vec<f64>,
}

impl TimeGrid {
    pub fn new(knots: Vec<f64>) -> Result<Self> {
        if knots.len() < 2 || knots[0] != 0.0 {
            return Err(invalid("grid needs at least two knots starting at 0"));
        }
        if knots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("grid knots must be strictly increasing"));
        }
        Ok(Self { knots })
    }

    pub fn uniform(horizon: f64, steps: usize) -> Result<Self> {
        if horizon <= 0.0 {
            return Err(invalid("horizon must be positive"));
        }
        if steps == 0 {
            return Err(invalid("need at least one time step"));
        }
        let knots = (0..=steps)
            .map(|i| horizon * i as f64 / steps as f64)
            .collect();
        Ok(Self { knots })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn steps(&self) -> usize {
        self.knots.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        *self.knots.last().unwrap()
    }

    pub fn delta(&self, i: usize) -> f64 {
        self.knots[i + 1] - self.knots[i]
    }

    /// Mesh |pi| = max_i delta_i.
    pub fn mesh(&self) -> f64 {
        (0..self.steps())
            .map(|i| self.delta(i))
            .fold(0.0, f64::max)
    }
}

/// `make_uniform_grid` of the public surface; thin alias kept for symmetry
/// with the CLI vocabulary.
pub fn make_uniform_grid(horizon: f64, steps: usize) -> Result<TimeGrid> {
    TimeGrid::uniform(horizon, steps)
}
