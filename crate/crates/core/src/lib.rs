//! Monte Carlo solver for fully nonlinear second-order dynamic programming
//! equations via control randomization and regression on constrained BSDEs.
//!
//! The pipeline: simulate the forward pair (X, I) with a Poisson-randomized
//! control ([`randomization`]), run the regression-based backward recursion
//! with localization ([`solver`], [`regression`], [`truncation`]) to get the
//! upper-flavored estimate P1 and a feedback policy, then re-simulate under
//! that policy for the lower-flavored estimate P2 ([`evaluator`]). Benchmark
//! problems live in [`presets`], analytic references in [`oracles`].

pub mod error;
pub mod evaluator;
pub mod oracles;
pub mod pipeline;
pub mod presets;
pub mod problem;
pub mod randomization;
pub mod regression;
pub mod report;
pub mod solver;
pub mod truncation;

pub use error::{Error, Result};
pub use evaluator::{evaluate_fixed_control, evaluate_policy, mid_estimate, EstimateReport, PolicyEvaluation};
pub use oracles::{bs_call, digital_bs, lq_value, margrabe_spread, solve_lq_riccati, RiccatiSolution};
pub use pipeline::{run_once, RunOutput, RunSettings};
pub use presets::{preset_problem, LqParams, PresetName, ReferenceValues};
pub use problem::{make_uniform_grid, ControlBox, Problem, TimeGrid};
pub use randomization::{simulate, simulate_control, simulate_forward, RandomizedPathSet, RngPolicy, StreamLabel};
pub use regression::{evaluate, fit, fit_surface, BasisSpec, ControlStructure, DesignMatrix, Feature, GaussNewtonOptions, OutputTransform, RegressionFit};
pub use solver::{argmax_control, backward_solve, extract_z, BackwardResult, PolicyStep, PolicyTable, SolverOptions};
pub use truncation::{compute_bounds, compute_bounds_with_rw, gaussian_tail, gaussian_tail_bound, TruncationSpec};
