//! Independent analytic and ODE reference solutions used by tests and
//! reports: the Riccati system of the linear-quadratic benchmark and
//! lognormal closed forms for the pricing benchmarks.

use crate::error::{invalid, Result};
use crate::presets::LqParams;
use crate::problem::TimeGrid;
use crate::truncation::normal_cdf;

/// Riccati characterization of the linear-quadratic benchmark, sampled at
/// the grid knots.
#[derive(Clone, Debug)]
pub struct RiccatiSolution {
    pub grid: TimeGrid,
    /// P(t) at each knot.
    pub p: Vec<f64>,
    /// Q(t) at each knot.
    pub q_fn: Vec<f64>,
    /// Feedback slope A(t) at each knot.
    pub a_coef: Vec<f64>,
    /// Feedback intercept B(t) at each knot.
    pub b_coef: Vec<f64>,
    /// Constant term R(t) of the quadratic value ansatz; v(t, 0) = R(t).
    pub r_const: Vec<f64>,
    params: LqParams,
}

/// Backward RK4 integration of the Riccati system from T to 0.
///
///   P' = 2 mu0 P + mu1^2 P^2 / D,    P(T) = 2 lambda1
///   Q' = (mu0 + mu1^2 P / D) Q + sigma0 sigma1 mu1 P^2 / D,    Q(T) = 0
///   D  = 2 lambda0 + sigma1^2 P
/// The feedback is alpha*(t, x) = A(t) x + B(t) with A = -mu1 P / D and
/// B = -(mu1 Q + sigma0 sigma1 P) / D. Substituting the quadratic ansatz
/// v(t, x) = -P x^2 / 2 - Q x + R into the dynamic programming equation
/// leaves the scalar ODE for the constant term,
///   R' = sigma0^2 P / 2 - (mu1 Q + sigma0 sigma1 P)^2 / (2 D),    R(T) = 0,
/// which is integrated alongside. Substeps keep the local error below 1e-8.
pub fn solve_lq_riccati(params: &LqParams, grid: &TimeGrid) -> Result<RiccatiSolution> {
    if params.lambda0 <= 0.0 {
        return Err(invalid("lambda0 must be positive"));
    }
    if (grid.horizon() - params.horizon).abs() > 1e-12 {
        return Err(invalid("grid horizon does not match the problem horizon"));
    }
    let n = grid.steps();
    let mut p = vec![0.0; n + 1];
    let mut q_fn = vec![0.0; n + 1];
    let mut r_const = vec![0.0; n + 1];
    p[n] = 2.0 * params.lambda1;
    q_fn[n] = 0.0;
    r_const[n] = 0.0;

    // P ranges up to 400 with derivatives of order 1e3; 512 substeps per
    // knot interval keep the RK4 local error far below 1e-8
    const SUBSTEPS: usize = 512;
    for i in (0..n).rev() {
        let mut state = [p[i + 1], q_fn[i + 1], r_const[i + 1]];
        let h = -grid.delta(i) / SUBSTEPS as f64;
        for _ in 0..SUBSTEPS {
            state = rk4_step(params, state, h);
        }
        p[i] = state[0];
        q_fn[i] = state[1];
        r_const[i] = state[2];
    }

    let a_coef: Vec<f64> = p.iter().map(|pv| feedback_a(params, *pv)).collect();
    let b_coef: Vec<f64> = p
        .iter()
        .zip(&q_fn)
        .map(|(pv, qv)| feedback_b(params, *pv, *qv))
        .collect();

    Ok(RiccatiSolution {
        grid: grid.clone(),
        p,
        q_fn,
        a_coef,
        b_coef,
        r_const,
        params: *params,
    })
}

fn rhs(params: &LqParams, s: [f64; 3]) -> [f64; 3] {
    let LqParams { lambda0, mu0, mu1, sigma0, sigma1, .. } = *params;
    let [p, q, _r] = s;
    let d = 2.0 * lambda0 + sigma1 * sigma1 * p;
    let dp = 2.0 * mu0 * p + mu1 * mu1 * p * p / d;
    let dq = (mu0 + mu1 * mu1 * p / d) * q + sigma0 * sigma1 * mu1 * p * p / d;
    let num = mu1 * q + sigma0 * sigma1 * p;
    let dr = 0.5 * sigma0 * sigma0 * p - num * num / (2.0 * d);
    [dp, dq, dr]
}

fn rk4_step(params: &LqParams, s: [f64; 3], h: f64) -> [f64; 3] {
    let add = |a: [f64; 3], b: [f64; 3], c: f64| [a[0] + c * b[0], a[1] + c * b[1], a[2] + c * b[2]];
    let k1 = rhs(params, s);
    let k2 = rhs(params, add(s, k1, h / 2.0));
    let k3 = rhs(params, add(s, k2, h / 2.0));
    let k4 = rhs(params, add(s, k3, h));
    [
        s[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        s[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        s[2] + h / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]),
    ]
}

fn feedback_a(params: &LqParams, p: f64) -> f64 {
    -params.mu1 * p / (2.0 * params.lambda0 + params.sigma1 * params.sigma1 * p)
}

fn feedback_b(params: &LqParams, p: f64, q: f64) -> f64 {
    -(params.mu1 * q + params.sigma0 * params.sigma1 * p)
        / (2.0 * params.lambda0 + params.sigma1 * params.sigma1 * p)
}

/// Analytic value v(t, x) = -P(t) x^2 / 2 - Q(t) x + R(t) at a grid knot.
pub fn lq_value(riccati: &RiccatiSolution, t: f64, x: f64) -> Result<f64> {
    let idx = riccati
        .grid
        .knots()
        .iter()
        .position(|k| (k - t).abs() < 1e-12)
        .ok_or_else(|| invalid(format!("t = {t} is not a knot of the oracle grid")))?;
    Ok(-0.5 * riccati.p[idx] * x * x - riccati.q_fn[idx] * x + riccati.r_const[idx])
}

impl RiccatiSolution {
    pub fn params(&self) -> &LqParams {
        &self.params
    }
}

/// Black-Scholes call (zero rates).
pub fn bs_call(s: f64, k: f64, sigma: f64, t: f64) -> f64 {
    let sig_sqrt = sigma * t.sqrt();
    let d1 = ((s / k).ln() + 0.5 * sigma * sigma * t) / sig_sqrt;
    let d2 = d1 - sig_sqrt;
    s * normal_cdf(d1) - k * normal_cdf(d2)
}

/// Digital paying 100 on {S(T) >= K} (zero rates): 100 N(d2).
pub fn digital_bs(s: f64, k: f64, sigma: f64, t: f64) -> f64 {
    if sigma * t.sqrt() == 0.0 {
        return if s >= k { 100.0 } else { 0.0 };
    }
    let d2 = ((s / k).ln() - 0.5 * sigma * sigma * t) / (sigma * t.sqrt());
    100.0 * normal_cdf(d2)
}

/// Exchange-option value of (S2(T) - k S1(T))+ for correlated lognormals;
/// the effective volatility is sqrt(sigma1^2 + sigma2^2 - 2 rho sigma1 sigma2).
pub fn margrabe_spread(s1: f64, s2: f64, k: f64, sigma1: f64, sigma2: f64, rho: f64, t: f64) -> f64 {
    let sig_eff = (sigma1 * sigma1 + sigma2 * sigma2 - 2.0 * rho * sigma1 * sigma2).max(0.0).sqrt();
    if sig_eff * t.sqrt() == 0.0 {
        return (s2 - k * s1).max(0.0);
    }
    let sig_sqrt = sig_eff * t.sqrt();
    let d1 = ((s2 / (k * s1)).ln() + 0.5 * sig_eff * sig_eff * t) / sig_sqrt;
    let d2 = d1 - sig_sqrt;
    s2 * normal_cdf(d1) - k * s1 * normal_cdf(d2)
}
