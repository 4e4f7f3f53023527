//! Least-squares projection machinery: basis evaluation, design-matrix
//! assembly and coefficient solves.
//!
//! The linear solve factors the design with a blocked tall-skinny QR: each
//! row block is reduced to an upper-triangular factor, and the factors are
//! folded in a fixed order so the result does not depend on the number of
//! worker threads. Ill-conditioned designs (sigmoid-composed bases produce
//! near-collinear columns) fall back to a truncated singular-value solve.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};

/// Condition-number threshold beyond which the QR solve defers to SVD.
pub const CONDITION_LIMIT: f64 = 1e8;
/// Relative singular-value cutoff for the truncated SVD fallback.
pub const SVD_CUTOFF: f64 = 1e-10;
/// Clipping margin for the logit seed of sigmoid fits.
pub const LOGIT_CLIP: f64 = 1e-4;

const TSQR_BLOCK: usize = 8192;

/// One scalar basis function p_k(x, a).
#[derive(Clone)]
pub struct Feature {
    pub name: String,
    eval: Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>,
}

impl Feature {
    pub fn new(name: impl Into<String>, eval: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self { name: name.into(), eval: Arc::new(eval) }
    }

    #[inline]
    pub fn eval(&self, x: &[f64], a: &[f64]) -> f64 {
        (self.eval)(x, a)
    }
}

impl fmt::Debug for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Feature({})", self.name)
    }
}

/// How the fitted surface depends on the coefficient vector.
#[derive(Clone)]
pub enum OutputTransform {
    /// phi = lambda . p(x, a)
    Linear,
    /// phi = scale(x) * S(lambda . p(x, a)), S the logistic function.
    Sigmoid { scale: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync> },
}

impl fmt::Debug for OutputTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OutputTransform::Linear => write!(f, "Linear"),
            OutputTransform::Sigmoid { .. } => write!(f, "Sigmoid"),
        }
    }
}

/// Polynomial structure of the regression surface in the control argument.
/// Drives the argmax strategy of the backward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ControlStructure {
    QuadraticInA,
    LinearInA,
    General,
}

/// Named set of regression features with its output transform.
#[derive(Clone, Debug)]
pub struct BasisSpec {
    pub name: String,
    pub features: Vec<Feature>,
    pub output: OutputTransform,
    pub control_structure: ControlStructure,
}

impl BasisSpec {
    pub fn count(&self) -> usize {
        self.features.len()
    }

    /// Inner linear combination lambda . p(x, a).
    #[inline]
    pub fn inner(&self, coefs: &[f64], x: &[f64], a: &[f64]) -> f64 {
        self.features
            .iter()
            .zip(coefs)
            .map(|(p, c)| c * p.eval(x, a))
            .sum()
    }

    pub fn scale(&self, x: &[f64]) -> f64 {
        match &self.output {
            OutputTransform::Linear => 1.0,
            OutputTransform::Sigmoid { scale } => scale(x),
        }
    }

    /// Fitted surface value.
    pub fn surface(&self, coefs: &[f64], x: &[f64], a: &[f64]) -> f64 {
        let u = self.inner(coefs, x, a);
        match &self.output {
            OutputTransform::Linear => u,
            OutputTransform::Sigmoid { scale } => scale(x) * sigmoid(u),
        }
    }

    pub fn fill_row(&self, x: &[f64], a: &[f64], row: &mut [f64]) {
        for (slot, p) in row.iter_mut().zip(&self.features) {
            *slot = p.eval(x, a);
        }
    }
}

#[inline]
pub fn sigmoid(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

#[inline]
fn sigmoid_deriv(u: f64) -> f64 {
    let s = sigmoid(u);
    s * (1.0 - s)
}

/// Outcome of a least-squares solve.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct RegressionFit {
    pub coefficients: Vec<f64>,
    pub residual_mse: f64,
    pub condition_estimate: f64,
}

/// Row-major design matrix.
#[derive(Clone, Debug)]
pub struct DesignMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl DesignMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(invalid("design matrix shape mismatch"));
        }
        Ok(Self { rows, cols, data })
    }

    #[inline]
    pub fn row(&self, m: usize) -> &[f64] {
        &self.data[m * self.cols..(m + 1) * self.cols]
    }
}

/// Upper-triangular factor of `[design | target]`, built blockwise.
/// The top-left `cols x cols` block is R, the last column holds Q^T b and the
/// bottom-right entry the norm of the orthogonal residual component.
fn tsqr(design: &DesignMatrix, targets: &[f64]) -> DMatrix<f64> {
    let b = design.cols;
    let aug = b + 1;
    let blocks: Vec<DMatrix<f64>> = design
        .data
        .par_chunks(TSQR_BLOCK * b)
        .zip(targets.par_chunks(TSQR_BLOCK))
        .map(|(chunk, tchunk)| {
            let rows = tchunk.len();
            let mut block = DMatrix::zeros(rows, aug);
            for r in 0..rows {
                for c in 0..b {
                    block[(r, c)] = chunk[r * b + c];
                }
                block[(r, b)] = tchunk[r];
            }
            block.qr().r()
        })
        .collect();

    // fixed left-to-right fold keeps the factor bit-identical across thread counts
    let mut acc: Option<DMatrix<f64>> = None;
    for r in blocks {
        acc = Some(match acc {
            None => r,
            Some(prev) => {
                let stacked = DMatrix::from_fn(prev.nrows() + r.nrows(), aug, |i, j| {
                    if i < prev.nrows() { prev[(i, j)] } else { r[(i - prev.nrows(), j)] }
                });
                let qr = stacked.qr();
                let rr = qr.r();
                rr.rows(0, rr.nrows().min(aug)).into_owned()
            }
        });
    }
    let mut r = acc.expect("non-empty design");
    if r.nrows() < aug {
        let mut padded = DMatrix::zeros(aug, aug);
        padded.rows_mut(0, r.nrows()).copy_from(&r);
        r = padded;
    }
    r
}

/// Empirical least-squares coefficients for `targets` on `design`.
pub fn fit(design: &DesignMatrix, targets: &[f64]) -> Result<RegressionFit> {
    let (m, b) = (design.rows, design.cols);
    if targets.len() != m {
        return Err(invalid("target length does not match design rows"));
    }
    if m < b {
        return Err(Error::UnderDetermined { rows: m, cols: b });
    }
    if design.data.iter().any(|v| !v.is_finite()) || targets.iter().any(|v| !v.is_finite()) {
        return Err(invalid("non-finite entries in regression inputs"));
    }

    let r_aug = tsqr(design, targets);
    let r = r_aug.view((0, 0), (b, b)).into_owned();
    let qtb = DVector::from_fn(b, |i, _| r_aug[(i, b)]);
    let orth_resid = r_aug[(b, b)];

    let mut diag_max = 0.0f64;
    let mut diag_min = f64::INFINITY;
    for i in 0..b {
        let d = r[(i, i)].abs();
        diag_max = diag_max.max(d);
        diag_min = diag_min.min(d);
    }
    let condition_estimate = if diag_min > 0.0 { diag_max / diag_min } else { f64::INFINITY };

    let coefs = if condition_estimate <= CONDITION_LIMIT {
        r.clone().solve_upper_triangular(&qtb).ok_or_else(|| invalid("singular triangular solve"))?
    } else {
        // rank-deficiency fallback: truncated SVD of R has the same singular
        // values as the full design
        let svd = r.clone().svd(true, true);
        svd.solve(&qtb, SVD_CUTOFF * svd.singular_values[0]).map_err(invalid)?
    };

    let fit_resid = (&r * &coefs - &qtb).norm_squared();
    let residual_mse = (fit_resid + orth_resid * orth_resid) / m as f64;

    Ok(RegressionFit {
        coefficients: coefs.iter().copied().collect(),
        residual_mse,
        condition_estimate,
    })
}

/// Evaluate a fitted surface at one point.
pub fn evaluate(fit: &RegressionFit, basis: &BasisSpec, x: &[f64], a: &[f64]) -> f64 {
    basis.surface(&fit.coefficients, x, a)
}

/// Options for the Gauss-Newton refinement of sigmoid bases.
#[derive(Clone, Copy, Debug)]
pub struct GaussNewtonOptions {
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for GaussNewtonOptions {
    fn default() -> Self {
        Self { max_iterations: 30, tolerance: 1e-9 }
    }
}

/// Fit the basis to `targets` over precomputed feature rows and scales.
///
/// Linear bases go straight to the QR solve. Sigmoid bases run Gauss-Newton,
/// seeded from `warm_start` when available (the previous time step of the
/// backward recursion) and otherwise from a linear fit on the logit of the
/// clipped targets.
pub fn fit_surface(
    basis: &BasisSpec,
    rows: &DesignMatrix,
    scales: &[f64],
    targets: &[f64],
    warm_start: Option<&[f64]>,
    opts: GaussNewtonOptions,
) -> Result<RegressionFit> {
    match &basis.output {
        OutputTransform::Linear => fit(rows, targets),
        OutputTransform::Sigmoid { .. } => {
            let seed = match warm_start {
                Some(c) => c.to_vec(),
                None => logit_seed(rows, scales, targets)?,
            };
            gauss_newton(rows, scales, targets, seed, opts)
        }
    }
}

fn logit_seed(rows: &DesignMatrix, scales: &[f64], targets: &[f64]) -> Result<Vec<f64>> {
    let logits: Vec<f64> = targets
        .iter()
        .zip(scales)
        .map(|(t, s)| {
            let ratio = (t / s).clamp(LOGIT_CLIP, 1.0 - LOGIT_CLIP);
            (ratio / (1.0 - ratio)).ln()
        })
        .collect();
    Ok(fit(rows, &logits)?.coefficients)
}

fn gauss_newton(
    rows: &DesignMatrix,
    scales: &[f64],
    targets: &[f64],
    mut coefs: Vec<f64>,
    opts: GaussNewtonOptions,
) -> Result<RegressionFit> {
    let (m, b) = (rows.rows, rows.cols);
    if m < b {
        return Err(Error::UnderDetermined { rows: m, cols: b });
    }
    let sse = |c: &[f64]| -> f64 {
        rows.data
            .par_chunks(b)
            .zip(scales.par_iter().zip(targets.par_iter()))
            .map(|(row, (s, t))| {
                let u: f64 = row.iter().zip(c).map(|(p, l)| p * l).sum();
                let r = s * sigmoid(u) - t;
                r * r
            })
            .sum()
    };

    let mut current = sse(&coefs);
    let mut condition = 1.0;
    for _ in 0..opts.max_iterations {
        // weighted design J = scale * S'(u) * p and residual r = pred - target
        let mut jac = vec![0.0; m * b];
        let mut resid = vec![0.0; m];
        jac.par_chunks_mut(b)
            .zip(resid.par_iter_mut())
            .enumerate()
            .for_each(|(i, (jrow, r))| {
                let row = rows.row(i);
                let u: f64 = row.iter().zip(&coefs).map(|(p, l)| p * l).sum();
                let w = scales[i] * sigmoid_deriv(u);
                for (slot, p) in jrow.iter_mut().zip(row) {
                    *slot = w * p;
                }
                *r = scales[i] * sigmoid(u) - targets[i];
            });
        let jm = DesignMatrix::new(m, b, jac)?;
        let neg_r: Vec<f64> = resid.iter().map(|r| -r).collect();
        let step = fit(&jm, &neg_r)?;
        condition = step.condition_estimate;

        // backtracking line search on the step
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..10 {
            let trial: Vec<f64> = coefs
                .iter()
                .zip(&step.coefficients)
                .map(|(c, d)| c + alpha * d)
                .collect();
            let trial_sse = sse(&trial);
            if trial_sse <= current {
                let step_norm: f64 = step.coefficients.iter().map(|d| (alpha * d).powi(2)).sum::<f64>().sqrt();
                let coef_norm: f64 = coefs.iter().map(|c| c * c).sum::<f64>().sqrt();
                let improvement = (current - trial_sse) / current.max(f64::MIN_POSITIVE);
                coefs = trial;
                current = trial_sse;
                accepted = true;
                if improvement < opts.tolerance || step_norm < 1e-8 * (1.0 + coef_norm) {
                    return Ok(RegressionFit {
                        coefficients: coefs,
                        residual_mse: current / m as f64,
                        condition_estimate: condition,
                    });
                }
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok(RegressionFit {
        coefficients: coefs,
        residual_mse: current / m as f64,
        condition_estimate: condition,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_basis(names: &[&str], fns: Vec<Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>>) -> BasisSpec {
        BasisSpec {
            name: "test".into(),
            features: names
                .iter()
                .zip(fns)
                .map(|(n, f)| Feature { name: n.to_string(), eval: f })
                .collect(),
            output: OutputTransform::Linear,
            control_structure: ControlStructure::General,
        }
    }

    #[test]
    fn recovers_exact_coefficients() {
        // targets exactly lambda* . p with a well-spread design
        let m = 500;
        let truth = [1.5, -2.0, 0.75];
        let mut data = Vec::with_capacity(m * 3);
        let mut targets = Vec::with_capacity(m);
        for i in 0..m {
            let x = -1.0 + 2.0 * i as f64 / (m - 1) as f64;
            let row = [1.0, x, x * x];
            data.extend_from_slice(&row);
            targets.push(row.iter().zip(&truth).map(|(p, c)| p * c).sum());
        }
        let d = DesignMatrix::new(m, 3, data).unwrap();
        let fit = fit(&d, &targets).unwrap();
        for (c, t) in fit.coefficients.iter().zip(&truth) {
            assert!((c - t).abs() <= 1e-8 * t.abs(), "{c} vs {t}");
        }
        assert!(fit.residual_mse < 1e-16);
    }

    #[test]
    fn constant_target_loads_constant_column() {
        let m = 64;
        let mut data = Vec::new();
        for i in 0..m {
            data.extend_from_slice(&[1.0, i as f64 / m as f64]);
        }
        let d = DesignMatrix::new(m, 2, data).unwrap();
        let fit = fit(&d, &vec![3.25; m]).unwrap();
        assert!((fit.coefficients[0] - 3.25).abs() < 1e-10);
        assert!(fit.coefficients[1].abs() < 1e-10);
    }

    #[test]
    fn duplicated_columns_trigger_svd_fallback() {
        // 10 x 3 instance with an exact duplicate column; the fitted values
        // must match the full-rank sub-basis projection
        let m = 10;
        let mut data = Vec::new();
        let mut sub = Vec::new();
        for i in 0..m {
            let x = i as f64;
            data.extend_from_slice(&[1.0, x, x]);
            sub.extend_from_slice(&[1.0, x]);
        }
        let targets: Vec<f64> = (0..m).map(|i| (i as f64).sin()).collect();
        let full = DesignMatrix::new(m, 3, data.clone()).unwrap();
        let reduced = DesignMatrix::new(m, 2, sub).unwrap();
        let f_full = fit(&full, &targets).unwrap();
        let f_red = fit(&reduced, &targets).unwrap();
        assert!(f_full.condition_estimate > CONDITION_LIMIT);
        assert!((f_full.residual_mse - f_red.residual_mse).abs() < 1e-8);
        // pseudo-inverse oracle: fitted values agree pointwise
        for i in 0..m {
            let yf: f64 = full.row(i).iter().zip(&f_full.coefficients).map(|(p, c)| p * c).sum();
            let yr: f64 = reduced.row(i).iter().zip(&f_red.coefficients).map(|(p, c)| p * c).sum();
            assert!((yf - yr).abs() < 1e-8);
        }
    }

    #[test]
    fn under_determined_is_an_error() {
        let d = DesignMatrix::new(2, 3, vec![1.0; 6]).unwrap();
        assert!(matches!(fit(&d, &[1.0, 2.0]), Err(Error::UnderDetermined { .. })));
    }

    #[test]
    fn non_finite_entries_rejected() {
        let d = DesignMatrix::new(3, 1, vec![1.0, f64::NAN, 1.0]).unwrap();
        assert!(fit(&d, &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn residual_orthogonal_to_columns() {
        let m = 200;
        let mut data = Vec::new();
        let targets: Vec<f64> = (0..m).map(|i| ((i * 7919) % 100) as f64 / 25.0).collect();
        for i in 0..m {
            let x = i as f64 / m as f64;
            data.extend_from_slice(&[1.0, x, (3.0 * x).sin()]);
        }
        let d = DesignMatrix::new(m, 3, data).unwrap();
        let f = fit(&d, &targets).unwrap();
        let resid: Vec<f64> = (0..m)
            .map(|i| {
                targets[i] - d.row(i).iter().zip(&f.coefficients).map(|(p, c)| p * c).sum::<f64>()
            })
            .collect();
        let rnorm = resid.iter().map(|r| r * r).sum::<f64>().sqrt();
        for c in 0..3 {
            let col: Vec<f64> = (0..m).map(|i| d.row(i)[c]).collect();
            let cnorm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
            let dot: f64 = col.iter().zip(&resid).map(|(a, b)| a * b).sum();
            assert!(dot.abs() / (cnorm * rnorm) < 1e-6);
        }
    }

    #[test]
    fn projection_is_a_contraction() {
        let m = 150;
        let mut data = Vec::new();
        for i in 0..m {
            let x = i as f64 / m as f64;
            data.extend_from_slice(&[1.0, x, x * x]);
        }
        let d = DesignMatrix::new(m, 3, data).unwrap();
        let u: Vec<f64> = (0..m).map(|i| (i as f64 * 0.37).sin()).collect();
        let v: Vec<f64> = (0..m).map(|i| (i as f64 * 0.11).cos() * 2.0).collect();
        let fu = fit(&d, &u).unwrap();
        let fv = fit(&d, &v).unwrap();
        let fitted = |f: &RegressionFit, i: usize| -> f64 {
            d.row(i).iter().zip(&f.coefficients).map(|(p, c)| p * c).sum()
        };
        let dist_fit: f64 = (0..m).map(|i| (fitted(&fu, i) - fitted(&fv, i)).powi(2)).sum::<f64>().sqrt();
        let dist_tgt: f64 = u.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(dist_fit <= dist_tgt * (1.0 + 1e-12));
    }

    #[test]
    fn sigmoid_surface_saturates_to_scale() {
        // basis of sigmoid type: at u -> +inf the surface tends to scale(x)
        let basis = BasisSpec {
            name: "sig".into(),
            features: vec![Feature::new("u", |_x: &[f64], a: &[f64]| a[0])],
            output: OutputTransform::Sigmoid { scale: Arc::new(|_x: &[f64]| 10.0) },
            control_structure: ControlStructure::LinearInA,
        };
        let v = basis.surface(&[1.0], &[0.0], &[50.0]);
        assert!((v - 10.0).abs() < 1e-10);
    }

    #[test]
    fn gauss_newton_recovers_sigmoid_coefficients() {
        let truth = [0.4, -1.3];
        let m = 4000;
        let mut rows = Vec::new();
        let mut scales = Vec::new();
        let mut targets = Vec::new();
        for i in 0..m {
            let x = -3.0 + 6.0 * i as f64 / (m - 1) as f64;
            rows.extend_from_slice(&[1.0, x]);
            scales.push(20.0);
            let u = truth[0] + truth[1] * x;
            targets.push(20.0 * sigmoid(u));
        }
        let basis = BasisSpec {
            name: "sig".into(),
            features: vec![
                Feature::new("1", |_x: &[f64], _a: &[f64]| 1.0),
                Feature::new("x", |x: &[f64], _a: &[f64]| x[0]),
            ],
            output: OutputTransform::Sigmoid { scale: Arc::new(|_x: &[f64]| 20.0) },
            control_structure: ControlStructure::General,
        };
        let d = DesignMatrix::new(m, 2, rows).unwrap();
        let f = fit_surface(&basis, &d, &scales, &targets, None, GaussNewtonOptions::default()).unwrap();
        for (c, t) in f.coefficients.iter().zip(&truth) {
            assert!((c - t).abs() < 1e-6, "{c} vs {t}");
        }
    }

    #[test]
    fn zero_coefficients_evaluate_to_zero() {
        let basis = linear_basis(
            &["1", "x"],
            vec![Arc::new(|_x: &[f64], _a: &[f64]| 1.0), Arc::new(|x: &[f64], _a: &[f64]| x[0])],
        );
        let f = RegressionFit { coefficients: vec![0.0, 0.0], residual_mse: 0.0, condition_estimate: 1.0 };
        assert_eq!(evaluate(&f, &basis, &[3.0], &[0.0]), 0.0);
    }
}
