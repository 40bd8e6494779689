//! Acceptance gate: runs every primary criterion in order and prints one
//! PASS/FAIL line each. Exits non-zero if any criterion fails.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rotsig::exec::Execution;
use rotsig::features::{
    b_tensor, feature_matrix_with, invariant_integral, sample_random_weights, FeatureConfig,
    PointCloud, RadialBasis,
};
use rotsig::quadrature::{integral_by_quadrature_with, minimal_resolution, orthogonality_sweep, so3_grid};
use rotsig::so3::{legendre, random_euler, rotation_from_euler, wigner_D};
use rotsig::solvers::{
    logistic_objective, ridge_lsqr, ridge_pcr, ridge_svd, LsqrOptions, RidgeProblem,
};
use rotsig::timing::{percentile, quadratic_fit, synthetic_cloud};

struct Outcome {
    measured: f64,
    threshold: f64,
    detail: String,
}

impl Outcome {
    fn at_most(measured: f64, threshold: f64, detail: String) -> Self {
        Outcome { measured, threshold, detail }
    }

    fn passed(&self) -> bool {
        self.measured.is_finite() && self.measured <= self.threshold
    }
}

fn cloud(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> PointCloud {
    let pts = (0..n)
        .map(|_| loop {
            let p: [f64; 3] = [
                rng.random_range(-scale..scale),
                rng.random_range(-scale..scale),
                rng.random_range(-scale..scale),
            ];
            if p.iter().map(|c| c * c).sum::<f64>() > 1e-4 {
                break p;
            }
        })
        .collect();
    PointCloud::new(pts, false).unwrap()
}

fn rotation_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let rfs = sample_random_weights(&FeatureConfig {
        band_limit: 5,
        radial: RadialBasis::qm7(),
        weight_sigma: 2.0,
        n_features: 32,
        seed: 7,
        normalize_mass: false,
    })
    .unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(1..=16);
        let base = cloud(&mut rng, n, 2.5);
        let mut batch = vec![base.clone()];
        for _ in 0..5 {
            batch.push(base.rotated(&rotation_from_euler(random_euler(&mut rng))));
        }
        let fm = feature_matrix_with(Execution::default(), &batch, &rfs).unwrap();
        for r in 1..fm.n_rows {
            for c in 0..fm.n_cols {
                worst = worst.max((fm.get(r, c) - fm.get(0, c)).abs());
            }
        }
    }
    Outcome::at_most(worst, 1e-9, "100 clouds x 5 rotations, D = 32, L = 5".into())
}

fn quadrature_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let basis = RadialBasis::qm7();
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let l = rng.random_range(0..=4);
        let n = rng.random_range(1..=5);
        let p = cloud(&mut rng, n, 2.0);
        let w: Vec<f64> = (0..(l + 1) * (l + 1) * 2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let closed = invariant_integral(&b_tensor(&p, &basis, l).unwrap(), &w).unwrap();
        let (a, b, g) = minimal_resolution(l);
        let quad =
            integral_by_quadrature_with(Execution::default(), &p, &w, &basis, l, &so3_grid(a, b, g).unwrap())
                .unwrap();
        worst = worst.max((closed - quad).abs() / closed.abs().max(1e-12));
    }
    Outcome::at_most(worst, 1e-6, "20 cases, L <= 4, N <= 5, K = 2 (relative)".into())
}

fn wigner_orthogonality() -> Outcome {
    let grid = so3_grid(16, 12, 16).unwrap();
    let sweep = orthogonality_sweep(4, &grid);

    // the (1,0,0) x (1,0,0) entry, summed directly
    let mut direct = Complex64::new(0.0, 0.0);
    for node in grid.nodes() {
        let d = wigner_D(1, node.angles).get(0, 0);
        direct += d * d * node.weight;
    }
    let pinned = (direct - Complex64::new(8.0 * PI * PI / 3.0, 0.0)).norm();
    // (1,1,0) pairs with (1,-1,0) with sign (-1)^(1-0)
    let mut signed = Complex64::new(0.0, 0.0);
    for node in grid.nodes() {
        let a = wigner_D(1, node.angles).get(1, 0);
        let b = wigner_D(1, node.angles).get(-1, 0);
        signed += a * b * node.weight;
    }
    let sign_check = (signed + Complex64::new(8.0 * PI * PI / 3.0, 0.0)).norm();

    Outcome::at_most(
        sweep.max_residual.max(pinned).max(sign_check),
        1e-8,
        format!(
            "{} tuples, l <= 4, grid (16, 12, 16); <D1_00, D1_00> = {:.10}",
            sweep.tuples, direct.re
        ),
    )
}

fn legendre_b(p: &PointCloud, basis: &RadialBasis, l: usize, m: i64, k1: usize, k2: usize) -> f64 {
    let w = p.mass_weight();
    let mut total = 0.0;
    for a in p.points() {
        for b in p.points() {
            let (ra, rb) = (
                (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt(),
                (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt(),
            );
            let cos = (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]) / (ra * rb);
            total += basis.eval(ra)[k1] * basis.eval(rb)[k2] * legendre(l, cos.clamp(-1.0, 1.0));
        }
    }
    let sign = if m.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
    sign * 2.0 * PI * w * w * total
}

fn addition_theorem() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let basis = RadialBasis::modelnet();
    let l_max = 5;
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let n = rng.random_range(1..=12);
        let p = cloud(&mut rng, n, 1.0);
        let b = b_tensor(&p, &basis, l_max).unwrap();
        for l in 0..=l_max {
            let li = l as i64;
            for m in -li..=li {
                for k1 in 0..basis.len() {
                    for k2 in 0..basis.len() {
                        worst = worst.max((b.get(l, m, k1, k2) - legendre_b(&p, &basis, l, m, k1, k2)).abs());
                    }
                }
            }
        }
    }
    Outcome::at_most(worst, 1e-10, "50 clouds, L = 5, entrywise".into())
}

fn solver_cross_checks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let phi = DMatrix::from_fn(200, 500, |_, _| rng.random_range(-1.0..1.0));
    let y = DVector::from_fn(200, |_, _| rng.random_range(-1.0..1.0));
    let problem = RidgeProblem::new(phi, y, vec![1e-3]).unwrap();
    let exact = ridge_svd(&problem).unwrap().remove(0);
    let lsqr = ridge_lsqr(&problem, 1e-3, LsqrOptions { tol: 1e-14, max_iter: 20_000 }).unwrap();
    let lsqr_gap = (&lsqr.beta - &exact.beta).amax();

    let phi = DMatrix::from_fn(60, 20, |_, _| rng.random_range(-1.0..1.0));
    let y = DVector::from_fn(60, |_, _| rng.random_range(-1.0..1.0));
    let problem = RidgeProblem::new(phi, y, vec![0.1]).unwrap();
    let pcr_gap = (ridge_pcr(&problem, 0.1, 20).unwrap().beta - &ridge_svd(&problem).unwrap()[0].beta).amax();

    let mut grad_err: f64 = 0.0;
    for _ in 0..10 {
        let n = rng.random_range(2..=50);
        let d = rng.random_range(1..=10);
        let classes = rng.random_range(2..=4);
        let phi = DMatrix::from_fn(n, d, |_, _| rng.random_range(-2.0..2.0));
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let lambda = rng.random_range(0.0..2.0);
        for c in 0..classes {
            let t: Vec<f64> = labels.iter().map(|&l| (l == c) as u8 as f64).collect();
            let params = DVector::from_fn(d + 1, |_, _| rng.random_range(-1.0..1.0));
            let (_, grad) = logistic_objective(&phi, &t, &params, lambda);
            for i in 0..=d {
                let h = 1e-5;
                let mut p = params.clone();
                p[i] += h;
                let up = logistic_objective(&phi, &t, &p, lambda).0;
                p[i] -= 2.0 * h;
                let down = logistic_objective(&phi, &t, &p, lambda).0;
                let fd = (up - down) / (2.0 * h);
                grad_err = grad_err.max((fd - grad[i]).abs() / grad[i].abs().max(1.0));
            }
        }
    }

    // each sub-check is scaled to its own threshold; 1.0 is the gate
    let score = (lsqr_gap / 1e-4).max(pcr_gap / 1e-9).max(grad_err / 1e-6);
    Outcome::at_most(
        score,
        1.0,
        format!(
            "LSQR-SVD {lsqr_gap:.2e} (<= 1e-4, {} iters), PCR-SVD {pcr_gap:.2e} (<= 1e-9), logistic grad {grad_err:.2e} (<= 1e-6)",
            lsqr.diagnostics.iterations
        ),
    )
}

fn latency_scaling() -> Outcome {
    let rfs = sample_random_weights(&FeatureConfig {
        band_limit: 5,
        radial: RadialBasis::qm7(),
        weight_sigma: 2.0,
        n_features: 16,
        seed: 3,
        normalize_mass: false,
    })
    .unwrap();
    let sizes = [64usize, 128, 256, 512];
    let reps = 5;
    let mut medians = Vec::new();
    for &n in &sizes {
        let p = PointCloud::new(synthetic_cloud(n, 3.0, n as u64), false).unwrap();
        let batch = [p];
        let _ = feature_matrix_with(Execution::Sequential, &batch, &rfs).unwrap();
        let times: Vec<f64> = (0..reps)
            .map(|_| {
                let t = Instant::now();
                let fm = feature_matrix_with(Execution::Sequential, &batch, &rfs).unwrap();
                std::hint::black_box(fm);
                t.elapsed().as_secs_f64()
            })
            .collect();
        medians.push(percentile(&times, 50.0));
    }
    let ns: Vec<f64> = sizes.iter().map(|&n| n as f64).collect();
    let fit = quadratic_fit(&ns, &medians).unwrap();
    let timings: Vec<String> = sizes
        .iter()
        .zip(&medians)
        .map(|(n, t)| format!("N={n}: {t:.4}s"))
        .collect();
    // R² >= 0.95 expressed as 1 − R² <= 0.05
    Outcome::at_most(
        1.0 - fit.r_squared,
        0.05,
        format!("R^2 = {:.5}; {}", fit.r_squared, timings.join(", ")),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 6] = [
        ("1 rotation invariance", rotation_invariance),
        ("2 quadrature-oracle equivalence", quadrature_equivalence),
        ("3 Wigner orthogonality", wigner_orthogonality),
        ("4 addition-theorem identity for B", addition_theorem),
        ("5 solver cross-checks", solver_cross_checks),
        ("6 latency scaling", latency_scaling),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let start = Instant::now();
        let outcome = run();
        let status = if outcome.passed() { "PASS" } else { "FAIL" };
        if !outcome.passed() {
            failed += 1;
        }
        println!(
            "criterion {name}: {status} measured {:.3e} threshold {:.1e} [{}] ({:.1}s)",
            outcome.measured,
            outcome.threshold,
            outcome.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("acceptance: {failed} criterion(s) failed");
        ExitCode::FAILURE
    } else {
        println!("acceptance: all 6 primary criteria passed");
        ExitCode::SUCCESS
    }
}
