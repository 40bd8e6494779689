//! Self-checks run by `rotsig validate`: each check measures a residual
//! against an independent reference and compares it with a threshold.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::exec::Execution;
use crate::features::{
    b_tensor, feature_matrix_with, invariant_integral, sample_random_weights, FeatureConfig,
    PointCloud, RadialBasis,
};
use crate::quadrature::{integral_by_quadrature_with, minimal_resolution, orthogonality_sweep_with, so3_grid};
use crate::so3::{
    legendre, random_euler, rotation_from_euler, sph_harm_table, wigner_D, UnitVector,
};
use crate::solvers::{logistic_objective, ridge_lsqr, ridge_svd, LsqrOptions, RidgeProblem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Fast,
    Full,
}

/// Deliberate defects for exercising the suite itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Faults {
    /// Negate little-d entries with odd `m' − m`.
    pub flip_wigner_sign: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub measured: f64,
    pub threshold: f64,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, measured: Result<f64>, threshold: f64, detail: String) -> Check {
        match measured {
            Ok(m) => Check {
                name,
                measured: m,
                threshold,
                passed: m.is_finite() && m <= threshold,
                detail,
            },
            Err(e) => Check {
                name,
                measured: f64::INFINITY,
                threshold,
                passed: false,
                detail: format!("{detail}; error: {e}"),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub level: Level,
    pub checks: Vec<Check>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn random_points(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<[f64; 3]> {
    (0..n)
        .map(|_| loop {
            let p = [
                rng.random_range(-scale..scale),
                rng.random_range(-scale..scale),
                rng.random_range(-scale..scale),
            ];
            if p.iter().map(|c| c * c).sum::<f64>() > 1e-4 {
                break p;
            }
        })
        .collect()
}

fn random_unit(rng: &mut ChaCha8Rng) -> UnitVector {
    let p = random_points(rng, 1, 1.0)[0];
    UnitVector::from_array(p).expect("bounded away from zero")
}

fn odd(n: i64) -> bool {
    n.rem_euclid(2) == 1
}

/// `max |Y_m(Rv) − Σ_{m'} Y_{m'}(v) D[m, m']|`.
pub fn rotation_rule_residual(cases: usize, max_l: usize, faults: Faults, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let v = random_unit(&mut rng);
        let angles = random_euler(&mut rng);
        let rotated = rotation_from_euler(angles).apply(v.to_array());
        let y = sph_harm_table(v, max_l)?;
        let yr = sph_harm_table(UnitVector::from_array(rotated)?, max_l)?;
        for l in 0..=max_l {
            let d = wigner_D(l, angles);
            let li = l as i64;
            for m in -li..=li {
                let mut s = Complex64::new(0.0, 0.0);
                for mp in -li..=li {
                    let mut entry = d.get(m, mp);
                    if faults.flip_wigner_sign && odd(mp - m) {
                        entry = -entry;
                    }
                    s += y.get(l, mp) * entry;
                }
                worst = worst.max((yr.get(l, m) - s).norm());
            }
        }
    }
    Ok(worst)
}

/// `max |D D† − I|` over random angles.
pub fn unitarity_residual(cases: usize, max_l: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let angles = random_euler(&mut rng);
        for l in 0..=max_l {
            let d = wigner_D(l, angles);
            let prod = d.matrix() * d.matrix().adjoint();
            let n = 2 * l + 1;
            for i in 0..n {
                for j in 0..n {
                    let want = if i == j { 1.0 } else { 0.0 };
                    worst = worst.max((prod[(i, j)] - Complex64::new(want, 0.0)).norm());
                }
            }
        }
    }
    worst
}

/// `(-1)^m 2π Σ_{i,j} w² R_k1(|x_i|) R_k2(|x_j|) P_l(x̂_i · x̂_j)`.
pub fn b_entry_by_legendre(cloud: &PointCloud, basis: &RadialBasis, l: usize, m: i64, k1: usize, k2: usize) -> f64 {
    let w = cloud.mass_weight();
    let pts: Vec<(UnitVector, Vec<f64>)> = cloud
        .points()
        .iter()
        .map(|p| {
            let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            (UnitVector::from_array(*p).expect("nonzero point"), basis.eval(r))
        })
        .collect();
    let mut total = 0.0;
    for (ua, ra) in &pts {
        for (ub, rb) in &pts {
            total += ra[k1] * rb[k2] * legendre(l, ua.dot(*ub).clamp(-1.0, 1.0));
        }
    }
    let sign = if odd(m) { -1.0 } else { 1.0 };
    sign * 2.0 * PI * w * w * total
}

pub fn addition_theorem_residual(clouds: usize, band_limit: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let basis = RadialBasis::modelnet();
    let mut worst: f64 = 0.0;
    for _ in 0..clouds {
        let n = rng.random_range(1..=12);
        let cloud = PointCloud::new(random_points(&mut rng, n, 1.0), rng.random_bool(0.5))?;
        let b = b_tensor(&cloud, &basis, band_limit)?;
        for l in 0..=band_limit {
            let li = l as i64;
            for m in -li..=li {
                for k1 in 0..basis.len() {
                    for k2 in 0..basis.len() {
                        let want = b_entry_by_legendre(&cloud, &basis, l, m, k1, k2);
                        worst = worst.max((b.get(l, m, k1, k2) - want).abs());
                    }
                }
            }
        }
    }
    Ok(worst)
}

/// Largest relative gap between the closed-form invariant integral and its
/// value on an exact SO(3) grid.
pub fn quadrature_relative_error(exec: Execution, cases: usize, max_l: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let basis = RadialBasis::qm7();
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let l = rng.random_range(0..=max_l);
        let n = rng.random_range(1..=5);
        let cloud = PointCloud::new(random_points(&mut rng, n, 2.0), false)?;
        let weights: Vec<f64> = (0..(l + 1) * (l + 1) * basis.len())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let closed = invariant_integral(&b_tensor(&cloud, &basis, l)?, &weights)?;
        let (na, nb, ng) = minimal_resolution(l);
        let quad = integral_by_quadrature_with(exec, &cloud, &weights, &basis, l, &so3_grid(na, nb, ng)?)?;
        worst = worst.max((closed - quad).abs() / closed.abs().max(1e-12));
    }
    Ok(worst)
}

pub fn feature_rotation_residual(exec: Execution, clouds: usize, rotations: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rfs = sample_random_weights(&FeatureConfig {
        band_limit: 4,
        radial: RadialBasis::qm7(),
        weight_sigma: 1.0,
        n_features: 8,
        seed,
        normalize_mass: false,
    })?;
    let mut worst: f64 = 0.0;
    for _ in 0..clouds {
        let n = rng.random_range(1..=10);
        let cloud = PointCloud::new(random_points(&mut rng, n, 2.0), false)?;
        let mut batch = vec![cloud.clone()];
        for _ in 0..rotations {
            batch.push(cloud.rotated(&rotation_from_euler(random_euler(&mut rng))));
        }
        let fm = feature_matrix_with(exec, &batch, &rfs)?;
        for r in 1..fm.n_rows {
            for c in 0..fm.n_cols {
                worst = worst.max((fm.get(r, c) - fm.get(0, c)).abs());
            }
        }
    }
    Ok(worst)
}

fn random_dense(rng: &mut ChaCha8Rng, n: usize, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0))
}

/// Relative normal-equation residual of the SVD ridge solution.
pub fn svd_normal_residual(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phi = random_dense(&mut rng, 60, 25);
    let y = DVector::from_fn(60, |_, _| rng.random_range(-1.0..1.0));
    let scale = phi.tr_mul(&y).norm();
    let sols = ridge_svd(&RidgeProblem::new(phi, y, vec![1e-6, 1e-3, 1.0])?)?;
    Ok(sols
        .iter()
        .map(|s| s.diagnostics.normal_residual / scale)
        .fold(0.0, f64::max))
}

/// `‖β_lsqr − β_svd‖_∞` on a wide random problem.
pub fn lsqr_svd_gap(rows: usize, cols: usize, lambda: f64, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phi = random_dense(&mut rng, rows, cols);
    let y = DVector::from_fn(rows, |_, _| rng.random_range(-1.0..1.0));
    let problem = RidgeProblem::new(phi, y, vec![lambda])?;
    let exact = ridge_svd(&problem)?.remove(0);
    let iterative = ridge_lsqr(&problem, lambda, LsqrOptions { tol: 1e-14, max_iter: 20 * (rows + cols) })?;
    Ok((exact.beta - iterative.beta).amax())
}

/// Largest relative gap between the analytic logistic gradient and central
/// differences, over every class of random small one-vs-rest problems.
pub fn logistic_gradient_error(instances: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let n = rng.random_range(2..=50);
        let d = rng.random_range(1..=10);
        let classes = rng.random_range(2..=4);
        let phi = random_dense(&mut rng, n, d);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let lambda = rng.random_range(0.0..1.0);
        for c in 0..classes {
            let targets: Vec<f64> = labels.iter().map(|&l| if l == c { 1.0 } else { 0.0 }).collect();
            let params = DVector::from_fn(d + 1, |_, _| rng.random_range(-1.0..1.0));
            let (_, grad) = logistic_objective(&phi, &targets, &params, lambda);
            let h = 1e-5;
            for i in 0..=d {
                let mut p = params.clone();
                p[i] += h;
                let fp = logistic_objective(&phi, &targets, &p, lambda).0;
                p[i] -= 2.0 * h;
                let fm = logistic_objective(&phi, &targets, &p, lambda).0;
                let fd = (fp - fm) / (2.0 * h);
                worst = worst.max((fd - grad[i]).abs() / grad[i].abs().max(1.0));
            }
        }
    }
    worst
}

pub fn run(level: Level, exec: Execution, faults: Faults) -> Report {
    let full = level == Level::Full;
    let pick = |fast: usize, slow: usize| if full { slow } else { fast };
    let mut checks = Vec::new();

    let (cases, max_l) = (pick(20, 50), pick(6, 8));
    checks.push(Check::new(
        "rotation_rule",
        rotation_rule_residual(cases, max_l, faults, 11),
        1e-9,
        format!("{cases} random (v, Q), l <= {max_l}"),
    ));

    let max_l = pick(8, 16);
    checks.push(Check::new(
        "wigner_unitarity",
        Ok(unitarity_residual(10, max_l, 12)),
        1e-10,
        format!("10 random rotations, l <= {max_l}"),
    ));

    let (max_l, res) = if full { (4, (16, 12, 16)) } else { (2, minimal_resolution(2)) };
    let sweep = so3_grid(res.0, res.1, res.2).map(|grid| orthogonality_sweep_with(exec, max_l, &grid));
    let detail = match &sweep {
        Ok(s) => format!("{} index pairs, l <= {max_l}, grid {res:?}", s.tuples),
        Err(_) => format!("l <= {max_l}, grid {res:?}"),
    };
    checks.push(Check::new("wigner_orthogonality", sweep.map(|s| s.max_residual), 1e-8, detail));

    let (cases, max_l) = (pick(4, 20), pick(3, 4));
    checks.push(Check::new(
        "quadrature_oracle",
        quadrature_relative_error(exec, cases, max_l, 13),
        1e-6,
        format!("{cases} random clouds and functions, L <= {max_l}, K = 2"),
    ));

    let clouds = pick(5, 50);
    checks.push(Check::new(
        "addition_theorem",
        addition_theorem_residual(clouds, 4, 14),
        1e-10,
        format!("{clouds} random clouds, L = 4"),
    ));

    let (clouds, rotations) = (pick(5, 100), pick(3, 5));
    checks.push(Check::new(
        "feature_rotation_invariance",
        feature_rotation_residual(exec, clouds, rotations, 15),
        1e-9,
        format!("{clouds} clouds x {rotations} rotations, D = 8, L = 4"),
    ));

    checks.push(Check::new(
        "ridge_svd_normal_residual",
        svd_normal_residual(16),
        1e-8,
        "60x25, relative to |Phi^T y|".into(),
    ));

    let (rows, cols) = if full { (200, 500) } else { (40, 80) };
    checks.push(Check::new(
        "lsqr_vs_svd",
        lsqr_svd_gap(rows, cols, 1e-3, 17),
        1e-4,
        format!("{rows}x{cols}, lambda = 1e-3"),
    ));

    let instances = pick(3, 10);
    checks.push(Check::new(
        "logistic_gradient",
        Ok(logistic_gradient_error(instances, 18)),
        1e-6,
        format!("{instances} random one-vs-rest problems"),
    ));

    Report { level, checks }
}
