//! Regularization-path fitting with validation-set selection.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::solvers::{
    logistic_ovr_train_with, normal_equation_residual, predict_classify, predict_regression,
    ridge_lsqr, ClassifierWeights, Diagnostics, LinearModel, LogisticOptions, LsqrOptions,
    RidgeProblem, RidgeSvd, SolverKind, StopReason,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RegressionSolver {
    Svd,
    Lsqr(LsqrOptions),
    Pcr { rank: usize },
}

impl RegressionSolver {
    pub fn kind(&self) -> SolverKind {
        match self {
            RegressionSolver::Svd => SolverKind::Svd,
            RegressionSolver::Lsqr(_) => SolverKind::Lsqr,
            RegressionSolver::Pcr { .. } => SolverKind::Pcr,
        }
    }
}

/// One point of the regularization path. `val_metric` is NaN without a
/// validation set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LambdaScore {
    pub lambda: f64,
    pub train_metric: f64,
    pub val_metric: f64,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct RegressionFit {
    pub model: LinearModel,
    pub target_mean: f64,
    pub lambda: f64,
    pub scores: Vec<LambdaScore>,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone)]
pub struct ClassificationFit {
    pub weights: ClassifierWeights,
    pub lambda: f64,
    pub scores: Vec<LambdaScore>,
}

pub fn mae(pred: &DVector<f64>, y: &DVector<f64>) -> f64 {
    if y.is_empty() {
        return f64::NAN;
    }
    (pred - y).abs().sum() / y.len() as f64
}

pub fn accuracy(pred: &[i64], labels: &[i64]) -> f64 {
    if labels.is_empty() {
        return f64::NAN;
    }
    pred.iter().zip(labels).filter(|(a, b)| a == b).count() as f64 / labels.len() as f64
}

fn sorted_grid(lambdas: &[f64]) -> Result<Vec<f64>> {
    if lambdas.is_empty() {
        return Err(Error::Config("empty regularization grid".into()));
    }
    if let Some(bad) = lambdas.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
        return Err(Error::Config(format!("invalid regularization {bad}")));
    }
    let mut grid = lambdas.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    Ok(grid)
}

/// Index of the best score; validation metric if present, otherwise the
/// training metric. Earlier (smaller λ) entries win ties.
fn select(scores: &[LambdaScore], lower_is_better: bool) -> usize {
    let key = |s: &LambdaScore| if s.val_metric.is_nan() { s.train_metric } else { s.val_metric };
    let mut best = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        let (a, b) = (key(s), key(&scores[best]));
        let better = if lower_is_better { a < b } else { a > b };
        if better || (b.is_nan() && !a.is_nan()) {
            best = i;
        }
    }
    best
}

fn check_rows(phi: &DMatrix<f64>, n: usize, what: &str) -> Result<()> {
    if phi.nrows() != n {
        return Err(Error::ShapeMismatch {
            expected: format!("{} {what}", phi.nrows()),
            found: format!("{n}"),
        });
    }
    Ok(())
}

/// Fits every λ on the training rows and keeps the one with the lowest
/// validation MAE.
///
/// Targets and feature columns are centered (never scaled) for the solve,
/// so the intercept `ȳ − φ̄·β` is not regularized.
pub fn fit_regression(
    phi_train: &DMatrix<f64>,
    y_train: &DVector<f64>,
    phi_val: &DMatrix<f64>,
    y_val: &DVector<f64>,
    solver: RegressionSolver,
    lambdas: &[f64],
) -> Result<RegressionFit> {
    check_rows(phi_val, y_val.len(), "validation targets")?;
    if phi_val.nrows() > 0 && phi_val.ncols() != phi_train.ncols() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} validation columns", phi_train.ncols()),
            found: format!("{}", phi_val.ncols()),
        });
    }
    let grid = sorted_grid(lambdas)?;
    let mean = if y_train.is_empty() { 0.0 } else { y_train.mean() };
    let centered = y_train.add_scalar(-mean);
    let col_means = phi_train.row_mean();
    let mut phi_c = phi_train.clone();
    for mut row in phi_c.row_iter_mut() {
        row -= &col_means;
    }
    let problem = RidgeProblem::new(phi_c, centered, grid.clone())?;

    let factor = match solver {
        RegressionSolver::Svd => Some((RidgeSvd::factor(problem.phi(), problem.y())?, usize::MAX)),
        RegressionSolver::Pcr { rank } => {
            let full = phi_train.nrows().min(phi_train.ncols());
            if rank == 0 || rank > full {
                return Err(Error::Config(format!("PCR rank {rank} outside 1..={full}")));
            }
            Some((RidgeSvd::factor(problem.phi(), problem.y())?, rank))
        }
        RegressionSolver::Lsqr(_) => None,
    };

    let mut fits = Vec::with_capacity(grid.len());
    for &lambda in &grid {
        let (beta, diag) = match (&factor, solver) {
            (Some((f, rank)), _) => {
                let beta = f.solve(lambda, *rank);
                let diag = Diagnostics {
                    iterations: 0,
                    converged: true,
                    stop: StopReason::Exact,
                    residual_norm: (problem.phi() * &beta - problem.y()).norm(),
                    normal_residual: normal_equation_residual(problem.phi(), problem.y(), &beta, lambda),
                };
                (beta, diag)
            }
            (None, RegressionSolver::Lsqr(opts)) => {
                let sol = ridge_lsqr(&problem, lambda, opts)?;
                if !sol.diagnostics.converged {
                    log::warn!("LSQR did not converge at λ = {lambda:e}: {:?}", sol.diagnostics.stop);
                }
                (sol.beta, sol.diagnostics)
            }
            (None, _) => unreachable!("factorized solvers always carry a factor"),
        };
        let intercept = mean - col_means.dot(&beta.transpose());
        let model = LinearModel { beta, intercept };
        let train_metric = mae(&predict_regression(&model, phi_train)?, y_train);
        let val_metric = if y_val.is_empty() {
            f64::NAN
        } else {
            mae(&predict_regression(&model, phi_val)?, y_val)
        };
        fits.push((
            LambdaScore {
                lambda,
                train_metric,
                val_metric,
                converged: diag.converged,
            },
            model,
            diag,
        ));
    }
    let scores: Vec<LambdaScore> = fits.iter().map(|f| f.0.clone()).collect();
    let best = select(&scores, true);
    let (score, model, diagnostics) = fits.swap_remove(best);
    Ok(RegressionFit {
        model,
        target_mean: mean,
        lambda: score.lambda,
        scores,
        diagnostics,
    })
}

/// One-vs-rest logistic models over the λ grid, keeping the best
/// validation accuracy.
#[allow(clippy::too_many_arguments)]
pub fn fit_classifier(
    exec: Execution,
    phi_train: &DMatrix<f64>,
    labels_train: &[i64],
    phi_val: &DMatrix<f64>,
    labels_val: &[i64],
    lambdas: &[f64],
    max_iter: usize,
    tol: f64,
) -> Result<ClassificationFit> {
    check_rows(phi_val, labels_val.len(), "validation labels")?;
    let grid = sorted_grid(lambdas)?;
    let mut fits = Vec::with_capacity(grid.len());
    for &lambda in &grid {
        let w = logistic_ovr_train_with(exec, phi_train, labels_train, LogisticOptions { lambda, max_iter, tol })?;
        let train_metric = accuracy(&predict_classify(&w, phi_train)?, labels_train);
        let val_metric = if labels_val.is_empty() {
            f64::NAN
        } else {
            accuracy(&predict_classify(&w, phi_val)?, labels_val)
        };
        let converged = w.diagnostics.iter().all(|d| d.converged);
        fits.push((
            LambdaScore {
                lambda,
                train_metric,
                val_metric,
                converged,
            },
            w,
        ));
    }
    let scores: Vec<LambdaScore> = fits.iter().map(|f| f.0.clone()).collect();
    let best = select(&scores, false);
    let (score, weights) = fits.swap_remove(best);
    Ok(ClassificationFit {
        weights,
        lambda: score.lambda,
        scores,
    })
}

/// Rows of `m` at `idx`, in order.
pub fn select_rows(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), m.ncols(), |r, c| m[(idx[r], c)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn data(rng: &mut ChaCha8Rng, n: usize, d: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn realizable_target_is_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let truth = DVector::from_vec(vec![0.5, -1.0, 2.0, 0.25]);
        let (xt, xv) = (data(&mut rng, 40, 4), data(&mut rng, 10, 4));
        let yt = (&xt * &truth).add_scalar(3.0);
        let yv = (&xv * &truth).add_scalar(3.0);
        for solver in [
            RegressionSolver::Svd,
            RegressionSolver::Lsqr(LsqrOptions { tol: 1e-12, max_iter: 500 }),
            RegressionSolver::Pcr { rank: 4 },
        ] {
            let fit = fit_regression(&xt, &yt, &xv, &yv, solver, &crate::solvers::default_lambda_grid()).unwrap();
            let best = fit.scores.iter().find(|s| s.lambda == fit.lambda).unwrap();
            assert!(best.val_metric <= 1e-6, "{solver:?}: {best:?}");
            assert!((fit.model.beta.clone() - &truth).amax() < 1e-6);
            assert!((fit.model.intercept - 3.0).abs() < 1e-6);
        }
    }

    #[test]
    fn constant_target_is_intercept_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (xt, xv) = (data(&mut rng, 20, 3), data(&mut rng, 5, 3));
        let fit = fit_regression(
            &xt,
            &DVector::from_element(20, -4.0),
            &xv,
            &DVector::from_element(5, -4.0),
            RegressionSolver::Svd,
            &[1e-3, 1.0],
        )
        .unwrap();
        assert!(fit.model.beta.amax() < 1e-12);
        assert!(fit.scores.iter().all(|s| s.val_metric < 1e-12));
        // tie → smaller λ
        assert_eq!(fit.lambda, 1e-3);
    }

    #[test]
    fn reported_mae_matches_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (xt, xv) = (data(&mut rng, 30, 5), data(&mut rng, 8, 5));
        let yt = DVector::from_fn(30, |_, _| rng.random_range(-1.0..1.0));
        let yv = DVector::from_fn(8, |_, _| rng.random_range(-1.0..1.0));
        let fit = fit_regression(&xt, &yt, &xv, &yv, RegressionSolver::Svd, &[1e-2, 1e-1, 1.0]).unwrap();
        let pred = &xv * &fit.model.beta;
        let manual: f64 = (0..8).map(|i| (pred[i] + fit.model.intercept - yv[i]).abs()).sum::<f64>() / 8.0;
        let reported = fit.scores.iter().find(|s| s.lambda == fit.lambda).unwrap().val_metric;
        assert!((manual - reported).abs() < 1e-12);
        let min = fit.scores.iter().map(|s| s.val_metric).fold(f64::INFINITY, f64::min);
        assert_eq!(reported, min);
    }

    #[test]
    fn grid_validation() {
        let x = DMatrix::zeros(3, 2);
        let y = DVector::zeros(3);
        let empty = DMatrix::zeros(0, 2);
        assert!(fit_regression(&x, &y, &empty, &DVector::zeros(0), RegressionSolver::Svd, &[]).is_err());
        assert!(fit_regression(&x, &y, &empty, &DVector::zeros(0), RegressionSolver::Svd, &[-1.0]).is_err());
        assert!(fit_regression(&x, &y, &empty, &DVector::zeros(0), RegressionSolver::Pcr { rank: 3 }, &[1.0]).is_err());
        // no validation rows: select on training error
        let fit = fit_regression(&x, &y, &empty, &DVector::zeros(0), RegressionSolver::Svd, &[1.0, 2.0]).unwrap();
        assert!(fit.scores[0].val_metric.is_nan());
    }

    #[test]
    fn classifier_selection() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 60;
        let x = data(&mut rng, n, 2);
        let labels: Vec<i64> = (0..n).map(|i| if x[(i, 0)] + 0.3 * x[(i, 1)] > 0.0 { 1 } else { 0 }).collect();
        let idx_t: Vec<usize> = (0..45).collect();
        let idx_v: Vec<usize> = (45..n).collect();
        let fit = fit_classifier(
            Execution::Sequential,
            &select_rows(&x, &idx_t),
            &labels[..45],
            &select_rows(&x, &idx_v),
            &labels[45..],
            &[1e-4, 1e-2, 1e4],
            300,
            1e-8,
        )
        .unwrap();
        assert!(fit.lambda < 1e4);
        let heavy = fit.scores.iter().find(|s| s.lambda == 1e4).unwrap();
        let best = fit.scores.iter().find(|s| s.lambda == fit.lambda).unwrap();
        assert!(best.val_metric >= heavy.val_metric);
        assert!(best.train_metric > 0.9);
    }

    #[test]
    fn metrics() {
        assert_eq!(accuracy(&[1, 2, 3], &[1, 0, 3]), 2.0 / 3.0);
        assert!(accuracy(&[], &[]).is_nan());
        let a = DVector::from_vec(vec![1.0, 2.0]);
        let b = DVector::from_vec(vec![0.0, 4.0]);
        assert_eq!(mae(&a, &b), 1.5);
    }
}
