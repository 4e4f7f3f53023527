//! The benchmark problems, each bundled with its recommended regression
//! basis and the published reference prices used in reports and tests.

use std::str::FromStr;
use std::sync::Arc;

use crate::error::{invalid, Error, Result};
use crate::problem::{ControlBox, Problem};
use crate::regression::{BasisSpec, ControlStructure, Feature, OutputTransform};

/// Benchmark identifiers addressable from the CLI.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PresetName {
    Lq,
    UvmCallspreadCorr,
    UvCallspread,
    UvDigital,
    UvOutperformer,
    UvOutperformerRho,
    UvOutperformerSpread,
    UvOutperformerSpreadRho,
}

impl PresetName {
    pub const ALL: [PresetName; 8] = [
        PresetName::Lq,
        PresetName::UvmCallspreadCorr,
        PresetName::UvCallspread,
        PresetName::UvDigital,
        PresetName::UvOutperformer,
        PresetName::UvOutperformerRho,
        PresetName::UvOutperformerSpread,
        PresetName::UvOutperformerSpreadRho,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PresetName::Lq => "lq",
            PresetName::UvmCallspreadCorr => "uvm_callspread_corr",
            PresetName::UvCallspread => "uv_callspread",
            PresetName::UvDigital => "uv_digital",
            PresetName::UvOutperformer => "uv_outperformer",
            PresetName::UvOutperformerRho => "uv_outperformer_rho",
            PresetName::UvOutperformerSpread => "uv_outperformer_spread",
            PresetName::UvOutperformerSpreadRho => "uv_outperformer_spread_rho",
        }
    }
}

impl std::fmt::Display for PresetName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PresetName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PresetName::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| invalid(format!("unknown preset '{s}'")))
    }
}

/// Published benchmark prices attached to a preset.
#[derive(Clone, Copy, Debug, Default)]
pub struct ReferenceValues {
    /// Reference value of the control problem (PDE price or analytic value).
    pub price: Option<f64>,
    /// Closed-form comparison price with mid parameters held constant.
    pub mid_vol_price: Option<f64>,
}

/// Fully parameterized benchmark problem with its recommended basis and
/// reference values.
pub fn preset_problem(name: PresetName) -> Result<(Problem, BasisSpec, ReferenceValues)> {
    let bundle = match name {
        PresetName::Lq => lq(),
        PresetName::UvmCallspreadCorr => uvm_callspread_corr(),
        PresetName::UvCallspread => uv_callspread(),
        PresetName::UvDigital => uv_digital(),
        PresetName::UvOutperformer => uv_outperformer(0.0, Some(11.25), None),
        PresetName::UvOutperformerRho => uv_outperformer(-0.5, Some(13.75), None),
        PresetName::UvOutperformerSpread => uv_outperformer_spread(false),
        PresetName::UvOutperformerSpreadRho => uv_outperformer_spread(true),
    };
    bundle.0.validate()?;
    Ok(bundle)
}

/// Parameters of the linear-quadratic benchmark.
#[derive(Clone, Copy, Debug)]
pub struct LqParams {
    pub lambda0: f64,
    pub lambda1: f64,
    pub mu0: f64,
    pub mu1: f64,
    pub sigma0: f64,
    pub sigma1: f64,
    pub horizon: f64,
}

impl Default for LqParams {
    fn default() -> Self {
        Self {
            lambda0: 20.0,
            lambda1: 200.0,
            mu0: 0.02,
            mu1: 0.5,
            sigma0: 0.2,
            sigma1: 0.1,
            horizon: 2.0,
        }
    }
}

/// Controlled scalar diffusion with quadratic penalties on the control and
/// the terminal state; the value and the optimal feedback are available in
/// closed form through a Riccati system.
fn lq() -> (Problem, BasisSpec, ReferenceValues) {
    let pars = LqParams::default();
    let LqParams { lambda0, lambda1, mu0, mu1, sigma0, sigma1, horizon } = pars;
    // the feedback |A(t) x + B(t)| stays below 6 on the 6-sigma state box,
    // so this box never binds in the relevant region
    let a_max = 10.0;
    let problem = Problem {
        name: "lq".into(),
        dim_x: 1,
        dim_w: 1,
        initial_state: vec![0.0],
        drift: Arc::new(move |x, a, out| out[0] = -mu0 * x[0] + mu1 * a[0]),
        diffusion: Arc::new(move |_x, a, out| out[0] = sigma0 + sigma1 * a[0]),
        running_reward: Some(Arc::new(move |_x, a, _y, _z| -lambda0 * a[0] * a[0])),
        reward_depends_on_z: false,
        terminal_reward: Arc::new(move |x: &[f64]| -lambda1 * x[0] * x[0]),
        horizon,
        controls: ControlBox::new(vec![-a_max], vec![a_max]).unwrap(),
        // |df/da| = 2 lambda0 |a| over the control box
        lip_f: 2.0 * lambda0 * a_max,
        // |dg/dx| = 2 lambda1 |x| over the default 6-sigma state box (~2)
        lip_g: 2.0 * lambda1 * 2.0,
        f_at_origin: 0.0,
    };
    let basis = BasisSpec {
        name: "lq_poly2".into(),
        features: vec![
            Feature::new("1", |_x: &[f64], _a: &[f64]| 1.0),
            Feature::new("x", |x: &[f64], _a: &[f64]| x[0]),
            Feature::new("a", |_x: &[f64], a: &[f64]| a[0]),
            Feature::new("x*a", |x: &[f64], a: &[f64]| x[0] * a[0]),
            Feature::new("x^2", |x: &[f64], _a: &[f64]| x[0] * x[0]),
            Feature::new("a^2", |_x: &[f64], a: &[f64]| a[0] * a[0]),
        ],
        output: OutputTransform::Linear,
        control_structure: ControlStructure::QuadraticInA,
    };
    let refs = ReferenceValues { price: Some(-5.705), mid_vol_price: None };
    (problem, basis, refs)
}

/// Call spread on S1 - S2 under uncertain correlation; the control is rho.
fn uvm_callspread_corr() -> (Problem, BasisSpec, ReferenceValues) {
    let (s10, s20) = (50.0, 50.0);
    let (sig1, sig2) = (0.4, 0.3);
    let (k1, k2) = (-5.0, 5.0);
    let problem = Problem {
        name: "uvm_callspread_corr".into(),
        dim_x: 2,
        dim_w: 2,
        initial_state: vec![s10, s20],
        drift: Arc::new(|_x, _a, out| out.fill(0.0)),
        diffusion: Arc::new(move |x, a, out| {
            let rho = a[0];
            out[0] = sig1 * x[0];
            out[1] = 0.0;
            out[2] = sig2 * x[1] * rho;
            out[3] = sig2 * x[1] * (1.0 - rho * rho).max(0.0).sqrt();
        }),
        running_reward: None,
        reward_depends_on_z: false,
        terminal_reward: Arc::new(move |x: &[f64]| {
            let spread = x[0] - x[1];
            (spread - k1).max(0.0) - (spread - k2).max(0.0)
        }),
        horizon: 0.25,
        controls: ControlBox::new(vec![-0.8], vec![0.8]).unwrap(),
        lip_f: 0.0,
        lip_g: std::f64::consts::SQRT_2,
        f_at_origin: 0.0,
    };
    let basis = BasisSpec {
        name: "corr_sigmoid".into(),
        features: vec![
            Feature::new("1", |_x: &[f64], _a: &[f64]| 1.0),
            Feature::new("s1", |x: &[f64], _a: &[f64]| x[0]),
            Feature::new("s2", |x: &[f64], _a: &[f64]| x[1]),
            Feature::new("rho", |_x: &[f64], a: &[f64]| a[0]),
            Feature::new("rho*s1", |x: &[f64], a: &[f64]| a[0] * x[0]),
            Feature::new("rho*s2", |x: &[f64], a: &[f64]| a[0] * x[1]),
        ],
        output: OutputTransform::Sigmoid { scale: Arc::new(move |_x: &[f64]| k2 - k1) },
        control_structure: ControlStructure::LinearInA,
    };
    (problem, basis, ReferenceValues::default())
}

/// Single-asset geometric Brownian motion with the volatility as the
/// uncertain control in [0.1, 0.2].
fn uv_gbm_1d(name: &str, terminal: crate::problem::TerminalRewardFn) -> Problem {
    Problem {
        name: name.into(),
        dim_x: 1,
        dim_w: 1,
        initial_state: vec![100.0],
        drift: Arc::new(|_x, _a, out| out.fill(0.0)),
        diffusion: Arc::new(|x, a, out| out[0] = a[0] * x[0]),
        running_reward: None,
        reward_depends_on_z: false,
        terminal_reward: terminal,
        horizon: 1.0,
        controls: ControlBox::new(vec![0.1], vec![0.2]).unwrap(),
        lip_f: 0.0,
        lip_g: 1.0,
        f_at_origin: 0.0,
    }
}

/// Sigmoid basis on {1, s, s^2} x {1, sigma} used by both 1-d pricing
/// problems; the inner combination is linear in sigma, so the optimal
/// volatility is bang-bang.
fn uv_1d_basis(name: &str, scale: f64) -> BasisSpec {
    BasisSpec {
        name: name.into(),
        features: vec![
            Feature::new("1", |_x: &[f64], _a: &[f64]| 1.0),
            Feature::new("s", |x: &[f64], _a: &[f64]| x[0]),
            Feature::new("s^2", |x: &[f64], _a: &[f64]| x[0] * x[0]),
            Feature::new("sig", |_x: &[f64], a: &[f64]| a[0]),
            Feature::new("sig*s", |x: &[f64], a: &[f64]| a[0] * x[0]),
            Feature::new("sig*s^2", |x: &[f64], a: &[f64]| a[0] * x[0] * x[0]),
        ],
        output: OutputTransform::Sigmoid { scale: Arc::new(move |_x: &[f64]| scale) },
        control_structure: ControlStructure::LinearInA,
    }
}

fn uv_callspread() -> (Problem, BasisSpec, ReferenceValues) {
    let (k1, k2) = (90.0, 110.0);
    let problem = uv_gbm_1d(
        "uv_callspread",
        Arc::new(move |x: &[f64]| (x[0] - k1).max(0.0) - (x[0] - k2).max(0.0)),
    );
    let basis = uv_1d_basis("callspread_sigmoid", k2 - k1);
    let refs = ReferenceValues { price: Some(11.20), mid_vol_price: Some(9.52) };
    (problem, basis, refs)
}

fn uv_digital() -> (Problem, BasisSpec, ReferenceValues) {
    let k = 100.0;
    let problem = uv_gbm_1d(
        "uv_digital",
        Arc::new(move |x: &[f64]| if x[0] >= k { 100.0 } else { 0.0 }),
    );
    let mut problem = problem;
    // the payoff is discontinuous; no Lipschitz constant exists
    problem.lip_g = 0.0;
    let basis = uv_1d_basis("digital_sigmoid", 100.0);
    let refs = ReferenceValues { price: Some(63.33), mid_vol_price: Some(46.54) };
    (problem, basis, refs)
}

/// Two geometric Brownian motions with uncertain volatilities in [0.1, 0.2]
/// and a fixed correlation; payoff (S1 - S2)+.
fn uv_outperformer(rho: f64, price: Option<f64>, bs: Option<f64>) -> (Problem, BasisSpec, ReferenceValues) {
    let name = if rho == 0.0 { "uv_outperformer" } else { "uv_outperformer_rho" };
    let problem = Problem {
        name: name.into(),
        dim_x: 2,
        dim_w: 2,
        initial_state: vec![100.0, 100.0],
        drift: Arc::new(|_x, _a, out| out.fill(0.0)),
        diffusion: Arc::new(move |x, a, out| {
            out[0] = a[0] * x[0];
            out[1] = 0.0;
            out[2] = a[1] * x[1] * rho;
            out[3] = a[1] * x[1] * (1.0 - rho * rho).max(0.0).sqrt();
        }),
        running_reward: None,
        reward_depends_on_z: false,
        terminal_reward: Arc::new(|x: &[f64]| (x[0] - x[1]).max(0.0)),
        horizon: 1.0,
        controls: ControlBox::new(vec![0.1, 0.1], vec![0.2, 0.2]).unwrap(),
        lip_f: 0.0,
        lip_g: std::f64::consts::SQRT_2,
        f_at_origin: 0.0,
    };
    // degree-2 polynomial in (s1, s2) times {1, sig1, sig2}, scaled by 100;
    // linear in the controls, so the optimum sits on a box corner
    let mut features = Vec::new();
    let poly: [(&str, fn(&[f64]) -> f64); 6] = [
        ("1", |_x| 1.0),
        ("s1", |x| x[0]),
        ("s1^2", |x| x[0] * x[0]),
        ("s2", |x| x[1]),
        ("s2^2", |x| x[1] * x[1]),
        ("s1*s2", |x| x[0] * x[1]),
    ];
    for (n, f) in poly {
        features.push(Feature::new(format!("100*{n}"), move |x: &[f64], _a: &[f64]| 100.0 * f(x)));
    }
    let poly5: [(&str, fn(&[f64]) -> f64); 5] =
        [("1", |_x| 1.0), ("s1", |x| x[0]), ("s1^2", |x| x[0] * x[0]), ("s2", |x| x[1]), ("s2^2", |x| x[1] * x[1])];
    for (k, label) in ["sig1", "sig2"].into_iter().enumerate() {
        for (n, f) in poly5 {
            features.push(Feature::new(
                format!("100*{label}*{n}"),
                move |x: &[f64], a: &[f64]| 100.0 * a[k] * f(x),
            ));
        }
    }
    let basis = BasisSpec {
        name: "outperformer_poly2".into(),
        features,
        output: OutputTransform::Linear,
        control_structure: ControlStructure::LinearInA,
    };
    (problem, basis, ReferenceValues { price, mid_vol_price: bs })
}

/// Outperformer spread (S2 - K1 S1)+ - (S2 - K2 S1)+ with uncertain
/// volatilities and either a fixed correlation of -0.5 or an uncertain
/// correlation in [-0.5, 0.5].
fn uv_outperformer_spread(uncertain_rho: bool) -> (Problem, BasisSpec, ReferenceValues) {
    let (k1, k2) = (0.9, 1.1);
    let (name, controls, refs) = if uncertain_rho {
        (
            "uv_outperformer_spread_rho",
            ControlBox::new(vec![0.1, 0.1, -0.5], vec![0.2, 0.2, 0.5]).unwrap(),
            ReferenceValues { price: Some(12.83), mid_vol_price: Some(9.24) },
        )
    } else {
        (
            "uv_outperformer_spread",
            ControlBox::new(vec![0.1, 0.1], vec![0.2, 0.2]).unwrap(),
            ReferenceValues { price: Some(11.41), mid_vol_price: Some(9.04) },
        )
    };
    let problem = Problem {
        name: name.into(),
        dim_x: 2,
        dim_w: 2,
        initial_state: vec![100.0, 100.0],
        drift: Arc::new(|_x, _a, out| out.fill(0.0)),
        diffusion: Arc::new(move |x, a, out| {
            let rho = if uncertain_rho { a[2] } else { -0.5 };
            out[0] = a[0] * x[0];
            out[1] = 0.0;
            out[2] = a[1] * x[1] * rho;
            out[3] = a[1] * x[1] * (1.0 - rho * rho).max(0.0).sqrt();
        }),
        running_reward: None,
        reward_depends_on_z: false,
        terminal_reward: Arc::new(move |x: &[f64]| {
            (x[1] - k1 * x[0]).max(0.0) - (x[1] - k2 * x[0]).max(0.0)
        }),
        horizon: 1.0,
        controls,
        lip_f: 0.0,
        lip_g: 1.0 + k2,
        f_at_origin: 0.0,
    };
    // homogeneous basis in the moneyness ratio r = s2/s1, scaled by
    // s1 (K2 - K1); the floor on s1 guards against a (never observed in
    // practice) negative Euler excursion
    fn ratio(x: &[f64]) -> f64 {
        x[1] / x[0].max(1e-8)
    }
    let mut features = vec![
        Feature::new("1", |_x: &[f64], _a: &[f64]| 1.0),
        Feature::new("r", move |x: &[f64], _a: &[f64]| ratio(x)),
        Feature::new("r^2", move |x: &[f64], _a: &[f64]| ratio(x).powi(2)),
    ];
    let labels: &[&str] = if uncertain_rho { &["sig1", "sig2", "rho"] } else { &["sig1", "sig2"] };
    for (k, label) in labels.iter().enumerate() {
        features.push(Feature::new(format!("{label}"), move |_x: &[f64], a: &[f64]| a[k]));
        features.push(Feature::new(format!("{label}*r"), move |x: &[f64], a: &[f64]| a[k] * ratio(x)));
        features.push(Feature::new(format!("{label}*r^2"), move |x: &[f64], a: &[f64]| {
            a[k] * ratio(x).powi(2)
        }));
    }
    let basis = BasisSpec {
        name: if uncertain_rho { "outperformer_spread_rho_sigmoid".into() } else { "outperformer_spread_sigmoid".into() },
        features,
        output: OutputTransform::Sigmoid {
            scale: Arc::new(move |x: &[f64]| x[0].max(1e-8) * (k2 - k1)),
        },
        control_structure: ControlStructure::LinearInA,
    };
    (problem, basis, refs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_names_round_trip() {
        for name in PresetName::ALL {
            assert_eq!(name.as_str().parse::<PresetName>().unwrap(), name);
            preset_problem(name).unwrap();
        }
        assert!("bogus".parse::<PresetName>().is_err());
    }

    #[test]
    fn lq_parameters() {
        let (p, b, r) = preset_problem(PresetName::Lq).unwrap();
        assert_eq!(p.initial_state, vec![0.0]);
        assert_eq!(p.horizon, 2.0);
        assert_eq!(b.count(), 6);
        assert_eq!(r.price, Some(-5.705));
        // drift -mu0 x + mu1 a and diffusion sigma0 + sigma1 a at a probe point
        let mut out = [0.0];
        (p.drift)(&[1.0], &[2.0], &mut out);
        assert!((out[0] - (-0.02 + 1.0)).abs() < 1e-15);
        (p.diffusion)(&[1.0], &[2.0], &mut out);
        assert!((out[0] - 0.4).abs() < 1e-15);
        assert!((p.running_reward(&[0.0], &[2.0], 0.0, &[]) - (-80.0)).abs() < 1e-12);
        assert!(((p.terminal_reward)(&[0.5]) - (-50.0)).abs() < 1e-12);
    }

    #[test]
    fn payoffs_match_printed_formulas() {
        let (p, _, _) = preset_problem(PresetName::UvDigital).unwrap();
        assert_eq!((p.terminal_reward)(&[100.0]), 100.0);
        assert_eq!((p.terminal_reward)(&[99.99]), 0.0);

        let (p, _, _) = preset_problem(PresetName::UvCallspread).unwrap();
        assert_eq!((p.terminal_reward)(&[80.0]), 0.0);
        assert_eq!((p.terminal_reward)(&[100.0]), 10.0);
        assert_eq!((p.terminal_reward)(&[150.0]), 20.0);

        let (p, _, _) = preset_problem(PresetName::UvmCallspreadCorr).unwrap();
        assert_eq!((p.terminal_reward)(&[50.0, 50.0]), 5.0);
        assert_eq!((p.terminal_reward)(&[40.0, 50.0]), 0.0);
        assert_eq!((p.terminal_reward)(&[60.0, 50.0]), 10.0);

        let (p, _, _) = preset_problem(PresetName::UvOutperformer).unwrap();
        assert_eq!((p.terminal_reward)(&[110.0, 100.0]), 10.0);
        assert_eq!((p.terminal_reward)(&[90.0, 100.0]), 0.0);

        let (p, _, _) = preset_problem(PresetName::UvOutperformerSpread).unwrap();
        // (s2 - 0.9 s1)+ - (s2 - 1.1 s1)+ at s1 = 100
        assert!(((p.terminal_reward)(&[100.0, 100.0]) - 10.0).abs() < 1e-12);
        assert_eq!((p.terminal_reward)(&[100.0, 80.0]), 0.0);
        assert!(((p.terminal_reward)(&[100.0, 130.0]) - 20.0).abs() < 1e-12);
    }

    #[test]
    fn coefficients_affine_in_control() {
        // second difference in a vanishes for affine drift/diffusion
        for name in [
            PresetName::Lq,
            PresetName::UvCallspread,
            PresetName::UvOutperformer,
        ] {
            let (p, _, _) = preset_problem(name).unwrap();
            let q = p.controls.dim();
            let x: Vec<f64> = p.initial_state.iter().map(|v| v + 1.0).collect();
            let mid: Vec<f64> = p
                .controls
                .lower()
                .iter()
                .zip(p.controls.upper())
                .map(|(lo, hi)| 0.5 * (lo + hi))
                .collect();
            for k in 0..q {
                let eval = |shift: f64| {
                    let mut a = mid.clone();
                    a[k] += shift;
                    let mut out = vec![0.0; p.dim_x];
                    (p.drift)(&x, &a, &mut out);
                    out[0]
                };
                let h = 0.01;
                let second = eval(h) - 2.0 * eval(0.0) + eval(-h);
                assert!(second.abs() < 1e-10, "{name} drift not affine in a[{k}]");
            }
        }
    }

    #[test]
    fn correlated_diffusion_reproduces_covariance() {
        // sigma sigma^T for the Cholesky rows must give the model covariance
        let (p, _, _) = preset_problem(PresetName::UvmCallspreadCorr).unwrap();
        let rho = 0.37;
        let x = [45.0, 55.0];
        let mut s = [0.0; 4];
        (p.diffusion)(&x, &[rho], &mut s);
        let cov = |r1: &[f64], r2: &[f64]| r1[0] * r2[0] + r1[1] * r2[1];
        let (row1, row2) = (&s[0..2], &s[2..4]);
        assert!((cov(row1, row1) - (0.4 * x[0]).powi(2)).abs() < 1e-9);
        assert!((cov(row2, row2) - (0.3 * x[1]).powi(2)).abs() < 1e-9);
        assert!((cov(row1, row2) - 0.4 * x[0] * 0.3 * x[1] * rho).abs() < 1e-9);
    }

    #[test]
    fn degenerate_correlation_allowed() {
        let (p, _, _) = preset_problem(PresetName::UvmCallspreadCorr).unwrap();
        let mut s = [0.0; 4];
        (p.diffusion)(&[50.0, 50.0], &[0.8], &mut s);
        assert!(s.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn spread_basis_scale_tracks_s1() {
        let (_, b, _) = preset_problem(PresetName::UvOutperformerSpread).unwrap();
        assert!((b.scale(&[100.0, 80.0]) - 20.0).abs() < 1e-12);
        assert!((b.scale(&[50.0, 80.0]) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn spread_rho_preset_has_three_controls_two_noises() {
        let (p, b, _) = preset_problem(PresetName::UvOutperformerSpreadRho).unwrap();
        assert_eq!(p.controls.dim(), 3);
        assert_eq!(p.dim_w, 2);
        assert_eq!(b.count(), 12);
    }
}
