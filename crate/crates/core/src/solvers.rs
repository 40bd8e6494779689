//! Linear models on feature matrices.
//!
//! Ridge regression `min ‖Φβ − y‖² + λ‖β‖²` is solved exactly through one
//! SVD shared by every λ, iteratively with damped LSQR, or on a rank-`k`
//! truncation of the SVD (principal-components ridge). Classification uses
//! one binary cross-entropy model per class and predicts the class with the
//! highest score.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};

/// Largest `min(n, d)` accepted by the dense SVD route.
pub const SVD_CAP: usize = 8192;

/// `10^-10, 10^-9, …, 10^2`.
pub fn default_lambda_grid() -> Vec<f64> {
    (-10..=2).map(|e| 10f64.powi(e)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeProblem {
    phi: DMatrix<f64>,
    y: DVector<f64>,
    lambdas: Vec<f64>,
}

impl RidgeProblem {
    pub fn new(phi: DMatrix<f64>, y: DVector<f64>, lambdas: Vec<f64>) -> Result<Self> {
        if phi.nrows() == 0 || phi.ncols() == 0 {
            return Err(Error::Config(format!(
                "ridge problem needs a non-empty matrix, got {}x{}",
                phi.nrows(),
                phi.ncols()
            )));
        }
        if y.len() != phi.nrows() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} targets", phi.nrows()),
                found: format!("{}", y.len()),
            });
        }
        if phi.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Config("ridge problem contains non-finite entries".into()));
        }
        if let Some(bad) = lambdas.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
            return Err(Error::Config(format!("invalid regularization {bad}")));
        }
        Ok(RidgeProblem { phi, y, lambdas })
    }

    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Svd,
    Lsqr,
    Pcr,
    Logistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Exact,
    ZeroRhs,
    ResidualTolerance,
    NormalTolerance,
    GradientTolerance,
    MaxIterations,
    LineSearchStalled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub iterations: usize,
    pub converged: bool,
    pub stop: StopReason,
    /// `‖Φβ − y‖`.
    pub residual_norm: f64,
    /// `‖(ΦᵀΦ + λI)β − Φᵀy‖` (gradient norm for logistic models).
    pub normal_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeSolution {
    pub lambda: f64,
    pub beta: DVector<f64>,
    pub solver: SolverKind,
    pub diagnostics: Diagnostics,
}

fn residual_norm(phi: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>) -> f64 {
    (phi * beta - y).norm()
}

pub fn normal_equation_residual(
    phi: &DMatrix<f64>,
    y: &DVector<f64>,
    beta: &DVector<f64>,
    lambda: f64,
) -> f64 {
    let r = phi * beta - y;
    (phi.tr_mul(&r) + beta * lambda).norm()
}

fn solution(
    problem: &RidgeProblem,
    lambda: f64,
    beta: DVector<f64>,
    solver: SolverKind,
    iterations: usize,
    converged: bool,
    stop: StopReason,
) -> RidgeSolution {
    let diagnostics = Diagnostics {
        iterations,
        converged,
        stop,
        residual_norm: residual_norm(&problem.phi, &problem.y, &beta),
        normal_residual: normal_equation_residual(&problem.phi, &problem.y, &beta, lambda),
    };
    RidgeSolution {
        lambda,
        beta,
        solver,
        diagnostics,
    }
}

/// Thin SVD of Φ with singular values sorted in decreasing order and `Uᵀy`
/// cached, so each λ costs one `O(d · min(n, d))` product.
#[derive(Debug, Clone)]
pub struct RidgeSvd {
    singular_values: Vec<f64>,
    v: DMatrix<f64>,
    uty: DVector<f64>,
}

impl RidgeSvd {
    pub fn factor(phi: &DMatrix<f64>, y: &DVector<f64>) -> Result<Self> {
        let rank_cap = phi.nrows().min(phi.ncols());
        if rank_cap > SVD_CAP {
            return Err(Error::Solver(format!(
                "min(n, d) = {rank_cap} exceeds the dense SVD cap {SVD_CAP}; use LSQR"
            )));
        }
        let svd = nalgebra::SVD::try_new(phi.clone(), true, true, f64::EPSILON, 0)
            .ok_or_else(|| Error::Solver("SVD did not converge".into()))?;
        let u = svd.u.expect("requested U");
        let v_t = svd.v_t.expect("requested Vᵀ");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let singular_values = order.iter().map(|&i| svd.singular_values[i]).collect();
        let v = DMatrix::from_fn(phi.ncols(), order.len(), |r, c| v_t[(order[c], r)]);
        let uty = DVector::from_iterator(order.len(), order.iter().map(|&i| u.column(i).dot(y)));
        Ok(RidgeSvd {
            singular_values,
            v,
            uty,
        })
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    /// `V_k (Σ_k² + λI)⁻¹ Σ_k U_kᵀ y` over the leading `rank` components.
    /// Singular values below the numerical-rank threshold are dropped when
    /// `λ = 0`.
    pub fn solve(&self, lambda: f64, rank: usize) -> DVector<f64> {
        let smax = self.singular_values.first().copied().unwrap_or(0.0);
        let cutoff = smax * f64::EPSILON * (self.v.nrows().max(self.uty.len())) as f64;
        let mut coeffs = DVector::zeros(self.singular_values.len());
        for (i, &s) in self.singular_values.iter().take(rank).enumerate() {
            let denom = s * s + lambda;
            if denom > 0.0 && (lambda > 0.0 || s > cutoff) {
                coeffs[i] = s * self.uty[i] / denom;
            }
        }
        &self.v * coeffs
    }
}

pub fn ridge_svd(problem: &RidgeProblem) -> Result<Vec<RidgeSolution>> {
    let factor = RidgeSvd::factor(&problem.phi, &problem.y)?;
    let rank = factor.singular_values.len();
    Ok(problem
        .lambdas
        .iter()
        .map(|&lambda| {
            let beta = factor.solve(lambda, rank);
            solution(problem, lambda, beta, SolverKind::Svd, 0, true, StopReason::Exact)
        })
        .collect())
}

pub fn ridge_pcr(problem: &RidgeProblem, lambda: f64, rank: usize) -> Result<RidgeSolution> {
    let full = problem.phi.nrows().min(problem.phi.ncols());
    if rank == 0 || rank > full {
        return Err(Error::Config(format!("PCR rank {rank} outside 1..={full}")));
    }
    if lambda.is_nan() || lambda < 0.0 {
        return Err(Error::Config(format!("invalid regularization {lambda}")));
    }
    let factor = RidgeSvd::factor(&problem.phi, &problem.y)?;
    let beta = factor.solve(lambda, rank);
    Ok(solution(problem, lambda, beta, SolverKind::Pcr, 0, true, StopReason::Exact))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LsqrOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LsqrOptions {
    fn default() -> Self {
        LsqrOptions {
            tol: 1e-10,
            max_iter: 100_000,
        }
    }
}

/// Damped LSQR on `[Φ; √λ I] β ≈ [y; 0]`, never forming the stacked matrix.
///
/// Stops when `‖r̄‖ ≤ tol (‖y‖ + ‖Ā‖‖β‖)` or `‖Āᵀr̄‖ ≤ tol ‖Ā‖‖r̄‖` where `Ā`
/// and `r̄` are the damped operator and residual. Hitting `max_iter` is
/// reported in the diagnostics, not as an error.
pub fn ridge_lsqr(problem: &RidgeProblem, lambda: f64, opts: LsqrOptions) -> Result<RidgeSolution> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Config(format!("invalid regularization {lambda}")));
    }
    if opts.tol.is_nan() || opts.tol <= 0.0 {
        return Err(Error::Config(format!("LSQR tolerance must be positive, got {}", opts.tol)));
    }
    let a = &problem.phi;
    let damp = lambda.sqrt();
    let mut x = DVector::zeros(a.ncols());

    let mut u = problem.y.clone();
    let mut beta = u.norm();
    let bnorm = beta;
    if beta > 0.0 {
        u /= beta;
    }
    let mut v = a.tr_mul(&u);
    let mut alpha = v.norm();
    if alpha > 0.0 {
        v /= alpha;
    }
    if alpha * beta == 0.0 {
        return Ok(solution(problem, lambda, x, SolverKind::Lsqr, 0, true, StopReason::ZeroRhs));
    }
    if opts.max_iter == 0 {
        return Ok(solution(problem, lambda, x, SolverKind::Lsqr, 0, false, StopReason::MaxIterations));
    }

    let mut w = v.clone();
    let mut phibar = beta;
    let mut rhobar = alpha;
    let mut anorm: f64 = 0.0;
    let mut res2 = 0.0;
    let mut stop = StopReason::MaxIterations;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        iterations += 1;
        u = a * &v - &u * alpha;
        beta = u.norm();
        if beta > 0.0 {
            u /= beta;
            anorm = (anorm * anorm + alpha * alpha + beta * beta + lambda).sqrt();
            v = a.tr_mul(&u) - &v * beta;
            alpha = v.norm();
            if alpha > 0.0 {
                v /= alpha;
            }
        } else {
            anorm = (anorm * anorm + alpha * alpha + lambda).sqrt();
        }

        let rhobar1 = (rhobar * rhobar + lambda).sqrt();
        let cs1 = rhobar / rhobar1;
        let sn1 = damp / rhobar1;
        let psi = sn1 * phibar;
        phibar *= cs1;

        let rho = (rhobar1 * rhobar1 + beta * beta).sqrt();
        let cs = rhobar1 / rho;
        let sn = beta / rho;
        let theta = sn * alpha;
        rhobar = -cs * alpha;
        let phi = cs * phibar;
        phibar *= sn;
        let tau = sn * phi;

        x.axpy(phi / rho, &w, 1.0);
        w = &v - &w * (theta / rho);

        res2 += psi * psi;
        let rnorm = (phibar * phibar + res2).sqrt();
        let arnorm = alpha * tau.abs();
        let xnorm = x.norm();

        if arnorm <= opts.tol * anorm * rnorm || rnorm == 0.0 {
            stop = StopReason::NormalTolerance;
            break;
        }
        if rnorm <= opts.tol * bnorm + opts.tol * anorm * xnorm {
            stop = StopReason::ResidualTolerance;
            break;
        }
    }
    let converged = stop != StopReason::MaxIterations;
    Ok(solution(problem, lambda, x, SolverKind::Lsqr, iterations, converged, stop))
}

/// Fitted regression model; predictions add back the centered target mean.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub beta: DVector<f64>,
    pub intercept: f64,
}

pub fn predict_regression(model: &LinearModel, phi: &DMatrix<f64>) -> Result<DVector<f64>> {
    if phi.ncols() != model.beta.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} feature columns", model.beta.len()),
            found: format!("{}", phi.ncols()),
        });
    }
    Ok((phi * &model.beta).add_scalar(model.intercept))
}

/// Ridge on rows of flattened element-encoded `B` tensors.
pub fn linear_b_baseline(
    b_rows: DMatrix<f64>,
    y: DVector<f64>,
    lambdas: Vec<f64>,
) -> Result<Vec<RidgeSolution>> {
    ridge_svd(&RidgeProblem::new(b_rows, y, lambdas)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticOptions {
    pub lambda: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        LogisticOptions {
            lambda: 1e-3,
            max_iter: 500,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierWeights {
    pub classes: Vec<i64>,
    /// One row per class.
    pub weights: DMatrix<f64>,
    pub intercepts: DVector<f64>,
    pub lambda: f64,
    pub diagnostics: Vec<Diagnostics>,
}

#[inline]
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Value and gradient of `Σ_i BCE(σ(φ_i·w + b), t_i) + λ‖w‖²` with respect
/// to `(w, b)`; the gradient's last entry is the intercept component.
pub fn logistic_objective(
    phi: &DMatrix<f64>,
    targets: &[f64],
    params: &DVector<f64>,
    lambda: f64,
) -> (f64, DVector<f64>) {
    let d = phi.ncols();
    let w = params.rows(0, d);
    let b = params[d];
    let z = phi * w;
    let mut loss = 0.0;
    let mut dz = DVector::zeros(phi.nrows());
    for i in 0..phi.nrows() {
        let zi = z[i] + b;
        loss += softplus(zi) - targets[i] * zi;
        dz[i] = sigmoid(zi) - targets[i];
    }
    loss += lambda * w.norm_squared();
    let gw = phi.tr_mul(&dz) + w * (2.0 * lambda);
    let mut grad = DVector::zeros(d + 1);
    grad.rows_mut(0, d).copy_from(&gw);
    grad[d] = dz.sum();
    (loss, grad)
}

const LBFGS_MEMORY: usize = 10;

fn minimize_binary(
    phi: &DMatrix<f64>,
    targets: &[f64],
    opts: &LogisticOptions,
) -> (DVector<f64>, Diagnostics) {
    let n = phi.ncols() + 1;
    let mut x = DVector::zeros(n);
    let (mut f, mut g) = logistic_objective(phi, targets, &x, opts.lambda);
    let mut s_hist: Vec<DVector<f64>> = Vec::new();
    let mut y_hist: Vec<DVector<f64>> = Vec::new();
    let mut stop = StopReason::MaxIterations;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        if g.norm() <= opts.tol {
            stop = StopReason::GradientTolerance;
            break;
        }
        iterations += 1;

        // two-loop recursion
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(s_hist.len());
        for (s, y) in s_hist.iter().zip(&y_hist).rev() {
            let rho = 1.0 / y.dot(s);
            let a = rho * s.dot(&q);
            q.axpy(-a, y, 1.0);
            alphas.push((a, rho));
        }
        if let (Some(s), Some(y)) = (s_hist.last(), y_hist.last()) {
            q *= s.dot(y) / y.dot(y);
        } else {
            q /= g.norm().max(1.0);
        }
        for ((s, y), (a, rho)) in s_hist.iter().zip(&y_hist).zip(alphas.into_iter().rev()) {
            let b = rho * y.dot(&q);
            q.axpy(a - b, s, 1.0);
        }
        let mut dir = -q;
        let mut slope = g.dot(&dir);
        if slope >= 0.0 {
            dir = -g.clone();
            slope = -g.norm_squared();
            s_hist.clear();
            y_hist.clear();
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial = &x + &dir * step;
            let (ft, gt) = logistic_objective(phi, targets, &trial, opts.lambda);
            if ft <= f + 1e-4 * step * slope {
                accepted = Some((trial, ft, gt));
                break;
            }
            step *= 0.5;
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            stop = StopReason::LineSearchStalled;
            break;
        };
        let s = &x_new - &x;
        let y = &g_new - &g;
        if s.dot(&y) > 1e-12 * s.norm() * y.norm() {
            if s_hist.len() == LBFGS_MEMORY {
                s_hist.remove(0);
                y_hist.remove(0);
            }
            s_hist.push(s);
            y_hist.push(y);
        }
        x = x_new;
        f = f_new;
        g = g_new;
    }
    if stop == StopReason::MaxIterations && g.norm() <= opts.tol {
        stop = StopReason::GradientTolerance;
    }
    let diagnostics = Diagnostics {
        iterations,
        converged: stop == StopReason::GradientTolerance,
        stop,
        residual_norm: f,
        normal_residual: g.norm(),
    };
    (x, diagnostics)
}

/// One-vs-rest L2-regularized logistic regression, one deterministic L-BFGS
/// run per class. Intercepts are not regularized.
pub fn logistic_ovr_train(
    phi: &DMatrix<f64>,
    labels: &[i64],
    opts: LogisticOptions,
) -> Result<ClassifierWeights> {
    logistic_ovr_train_with(Execution::default(), phi, labels, opts)
}

pub fn logistic_ovr_train_with(
    exec: Execution,
    phi: &DMatrix<f64>,
    labels: &[i64],
    opts: LogisticOptions,
) -> Result<ClassifierWeights> {
    if labels.len() != phi.nrows() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} labels", phi.nrows()),
            found: format!("{}", labels.len()),
        });
    }
    if !(opts.lambda >= 0.0 && opts.tol > 0.0) {
        return Err(Error::Config("logistic regression needs λ >= 0 and tol > 0".into()));
    }
    let mut classes = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    match classes.len() {
        0 => return Err(Error::Config("no training labels".into())),
        1 => return Err(Error::DegenerateLabels(classes[0])),
        _ => {}
    }
    let d = phi.ncols();
    let fits = exec::map_indexed(exec, classes.len(), |c| {
        let targets: Vec<f64> = labels
            .iter()
            .map(|&l| if l == classes[c] { 1.0 } else { 0.0 })
            .collect();
        minimize_binary(phi, &targets, &opts)
    });
    let mut weights = DMatrix::zeros(classes.len(), d);
    let mut intercepts = DVector::zeros(classes.len());
    let mut diagnostics = Vec::with_capacity(classes.len());
    for (c, (x, diag)) in fits.into_iter().enumerate() {
        weights.row_mut(c).copy_from(&x.rows(0, d).transpose());
        intercepts[c] = x[d];
        diagnostics.push(diag);
    }
    Ok(ClassifierWeights {
        classes,
        weights,
        intercepts,
        lambda: opts.lambda,
        diagnostics,
    })
}

/// `n × C` scores `φ·w_c + b_c`.
pub fn class_scores(model: &ClassifierWeights, phi: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if phi.ncols() != model.weights.ncols() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} feature columns", model.weights.ncols()),
            found: format!("{}", phi.ncols()),
        });
    }
    let mut scores = phi * model.weights.transpose();
    for mut row in scores.row_iter_mut() {
        row += model.intercepts.transpose();
    }
    Ok(scores)
}

/// Highest-scoring class per row; ties go to the lowest class index.
pub fn predict_classify(model: &ClassifierWeights, phi: &DMatrix<f64>) -> Result<Vec<i64>> {
    let scores = class_scores(model, phi)?;
    Ok(scores
        .row_iter()
        .map(|row| {
            let mut best = 0;
            for c in 1..row.len() {
                if row[c] > row[best] {
                    best = c;
                }
            }
            model.classes[best]
        })
        .collect())
}
