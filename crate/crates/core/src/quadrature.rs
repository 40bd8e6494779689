//! Brute-force integration over SO(3) on an Euler-angle product grid.
//!
//! Nodes are uniform in `α` and `γ` over `[0, 2π)` and Gauss–Legendre in
//! `cos β`, so a grid integrates the constant 1 to 8π². The grid is exact for
//! integrands whose `α`/`γ` frequencies stay below the node counts and whose
//! `β` part is a polynomial in `cos β` of degree below `2 n_β`.
//!
//! Minimal exact resolution for squared band-limited responses and for
//! products of two Wigner-D entries of degree at most `L`:
//!
//! | L | (n_α, n_β, n_γ) |
//! |---|-----------------|
//! | 0 | (1, 1, 1)       |
//! | 1 | (3, 2, 3)       |
//! | 2 | (5, 3, 5)       |
//! | 4 | (9, 5, 9)       |
//! | L | (2L+1, L+1, 2L+1) |

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::features::{PointCloud, RadialBasis, ZERO_NORM};
use crate::so3::{
    check_band_limit, rotation_from_euler, wigner_D, EulerAngles, SphHarmTable, UnitVector,
};

pub fn minimal_resolution(band_limit: usize) -> (usize, usize, usize) {
    (2 * band_limit + 1, band_limit + 1, 2 * band_limit + 1)
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`, nodes descending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_and_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_and_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = x;
        nodes[n - 1 - i] = -x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_and_derivative(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridNode {
    pub angles: EulerAngles,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SO3Grid {
    nodes: Vec<GridNode>,
    resolution: (usize, usize, usize),
}

impl SO3Grid {
    pub fn nodes(&self) -> &[GridNode] {
        &self.nodes
    }

    pub fn resolution(&self) -> (usize, usize, usize) {
        self.resolution
    }

    pub fn total_weight(&self) -> f64 {
        neumaier(self.nodes.iter().map(|n| n.weight))
    }
}

pub fn so3_grid(n_alpha: usize, n_beta: usize, n_gamma: usize) -> Result<SO3Grid> {
    if n_alpha == 0 || n_beta == 0 || n_gamma == 0 {
        return Err(Error::Config(format!(
            "grid resolution ({n_alpha}, {n_beta}, {n_gamma}) must be positive"
        )));
    }
    let (xs, ws) = gauss_legendre(n_beta);
    let da = TAU / n_alpha as f64;
    let dg = TAU / n_gamma as f64;
    let mut nodes = Vec::with_capacity(n_alpha * n_beta * n_gamma);
    for a in 0..n_alpha {
        for (x, w) in xs.iter().zip(&ws) {
            for c in 0..n_gamma {
                nodes.push(GridNode {
                    angles: EulerAngles {
                        alpha: a as f64 * da,
                        beta: x.clamp(-1.0, 1.0).acos(),
                        gamma: c as f64 * dg,
                    },
                    weight: da * dg * w,
                });
            }
        }
    }
    Ok(SO3Grid {
        nodes,
        resolution: (n_alpha, n_beta, n_gamma),
    })
}

fn neumaier(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

fn neumaier_complex(values: &[Complex64]) -> Complex64 {
    Complex64::new(
        neumaier(values.iter().map(|v| v.re)),
        neumaier(values.iter().map(|v| v.im)),
    )
}

fn check_weights(weights: &[f64], basis: &RadialBasis, band_limit: usize) -> Result<()> {
    let want = (band_limit + 1) * (band_limit + 1) * basis.len();
    if weights.len() != want {
        return Err(Error::ShapeMismatch {
            expected: format!("{want} weights"),
            found: format!("{}", weights.len()),
        });
    }
    Ok(())
}

/// Pointwise `g(x) = Σ_{k,l,m} w[l,m,k] Y_l^m(x̂) R_k(|x|)`.
pub fn eval_random_function(
    weights: &[f64],
    x: [f64; 3],
    basis: &RadialBasis,
    band_limit: usize,
) -> Result<Complex64> {
    check_band_limit(band_limit)?;
    check_weights(weights, basis, band_limit)?;
    let mut table = SphHarmTable::zeros(band_limit);
    let mut radial = vec![0.0; basis.len()];
    eval_with_buffers(weights, x, basis, &mut table, &mut radial)
}

fn eval_with_buffers(
    weights: &[f64],
    x: [f64; 3],
    basis: &RadialBasis,
    table: &mut SphHarmTable,
    radial: &mut [f64],
) -> Result<Complex64> {
    let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
    if r < ZERO_NORM {
        return Err(Error::Domain("random function is undefined at the origin".into()));
    }
    table.fill(UnitVector::new(x[0], x[1], x[2])?);
    basis.eval_into(r, radial);
    let k = radial.len();
    let mut total = Complex64::new(0.0, 0.0);
    for (lm, y) in table.values().iter().enumerate() {
        let w = &weights[lm * k..(lm + 1) * k];
        let radial_part: f64 = w.iter().zip(radial.iter()).map(|(a, b)| a * b).sum();
        total += y * radial_part;
    }
    Ok(total)
}

/// `∫_{SO(3)} <Q∘p, g>² dQ` on `grid`; the complex square is summed over the
/// grid and only its real part is returned.
pub fn integral_by_quadrature(
    cloud: &PointCloud,
    weights: &[f64],
    basis: &RadialBasis,
    band_limit: usize,
    grid: &SO3Grid,
) -> Result<f64> {
    integral_by_quadrature_with(Execution::default(), cloud, weights, basis, band_limit, grid)
}

pub fn integral_by_quadrature_with(
    exec: Execution,
    cloud: &PointCloud,
    weights: &[f64],
    basis: &RadialBasis,
    band_limit: usize,
    grid: &SO3Grid,
) -> Result<f64> {
    check_band_limit(band_limit)?;
    check_weights(weights, basis, band_limit)?;
    if cloud.is_empty() {
        return Ok(0.0);
    }
    let mass = cloud.mass_weight();
    let terms = exec::try_map_indexed(exec, grid.nodes.len(), |i| {
        let node = grid.nodes[i];
        let rotation = rotation_from_euler(node.angles);
        let mut table = SphHarmTable::zeros(band_limit);
        let mut radial = vec![0.0; basis.len()];
        let mut response = Complex64::new(0.0, 0.0);
        for p in cloud.points() {
            response += eval_with_buffers(weights, rotation.apply(*p), basis, &mut table, &mut radial)?;
        }
        response *= mass;
        Ok(response * response * node.weight)
    })?;
    Ok(neumaier_complex(&terms).re)
}

/// Closed form of `∫ D^{l1}[m1,k1] D^{l2}[m2,k2] dQ`.
pub fn wigner_product_integral(l1: usize, m1: i64, k1: i64, l2: usize, m2: i64, k2: i64) -> f64 {
    if l1 == l2 && m2 == -m1 && k2 == -k1 {
        let sign = if (m1 - k1).rem_euclid(2) == 0 { 1.0 } else { -1.0 };
        sign * 8.0 * PI * PI / (2 * l1 + 1) as f64
    } else {
        0.0
    }
}

fn check_order(l: usize, m: i64) -> bool {
    m.unsigned_abs() as usize <= l
}

/// `|quadrature − closed form|` for one product of Wigner-D entries.
pub fn wigner_orthogonality_residual(
    l1: usize,
    m1: i64,
    k1: i64,
    l2: usize,
    m2: i64,
    k2: i64,
    grid: &SO3Grid,
) -> Result<f64> {
    if !(check_order(l1, m1) && check_order(l1, k1) && check_order(l2, m2) && check_order(l2, k2)) {
        return Err(Error::Domain("Wigner index outside [-l, l]".into()));
    }
    let terms: Vec<Complex64> = grid
        .nodes
        .iter()
        .map(|node| {
            let a = wigner_D(l1, node.angles).get(m1, k1);
            let b = wigner_D(l2, node.angles).get(m2, k2);
            a * b * node.weight
        })
        .collect();
    let value = neumaier_complex(&terms);
    Ok((value - Complex64::new(wigner_product_integral(l1, m1, k1, l2, m2, k2), 0.0)).norm())
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrthogonalitySweep {
    pub tuples: usize,
    pub max_residual: f64,
    pub worst: (usize, i64, i64, usize, i64, i64),
}

/// Residuals of every index tuple with `l1, l2 <= max_l`, Wigner matrices
/// evaluated once per node.
pub fn orthogonality_sweep(max_l: usize, grid: &SO3Grid) -> OrthogonalitySweep {
    orthogonality_sweep_with(Execution::default(), max_l, grid)
}

pub fn orthogonality_sweep_with(exec: Execution, max_l: usize, grid: &SO3Grid) -> OrthogonalitySweep {
    // flat list of (l, m, k) entries
    let mut entries = Vec::new();
    for l in 0..=max_l {
        let li = l as i64;
        for m in -li..=li {
            for k in -li..=li {
                entries.push((l, m, k));
            }
        }
    }
    let per_node: Vec<Vec<Complex64>> = grid
        .nodes
        .iter()
        .map(|node| {
            let mats: Vec<_> = (0..=max_l).map(|l| wigner_D(l, node.angles)).collect();
            entries
                .iter()
                .map(|&(l, m, k)| mats[l].get(m, k))
                .collect()
        })
        .collect();
    let n = entries.len();
    let rows = exec::map_indexed(exec, n, |a| {
        let mut worst = (0.0, 0);
        let mut terms = vec![Complex64::new(0.0, 0.0); grid.nodes.len()];
        for b in 0..n {
            for (t, (vals, node)) in terms.iter_mut().zip(per_node.iter().zip(&grid.nodes)) {
                *t = vals[a] * vals[b] * node.weight;
            }
            let (l1, m1, k1) = entries[a];
            let (l2, m2, k2) = entries[b];
            let exact = wigner_product_integral(l1, m1, k1, l2, m2, k2);
            let r = (neumaier_complex(&terms) - Complex64::new(exact, 0.0)).norm();
            if r > worst.0 || b == 0 {
                worst = (r, b);
            }
        }
        worst
    });
    let (a, &(max_residual, b)) = rows
        .iter()
        .enumerate()
        .max_by(|x, y| x.1 .0.total_cmp(&y.1 .0))
        .expect("at least one entry");
    let (l1, m1, k1) = entries[a];
    let (l2, m2, k2) = entries[b];
    OrthogonalitySweep {
        tuples: n * n,
        max_residual,
        worst: (l1, m1, k1, l2, m2, k2),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::assoc_legendre;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const HAAR_MASS: f64 = 8.0 * PI * PI;

    #[test]
    fn gauss_legendre_exactness() {
        for n in 1..=12 {
            let (x, w) = gauss_legendre(n);
            assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-13);
            for deg in 0..2 * n {
                let got: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                let want = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg + 1) as f64 };
                assert!((got - want).abs() < 1e-13, "n={n} deg={deg}");
            }
        }
    }

    #[test]
    fn grid_mass() {
        for res in [(1, 1, 1), (4, 3, 4), (16, 12, 16), (7, 2, 3)] {
            let g = so3_grid(res.0, res.1, res.2).unwrap();
            assert_eq!(g.nodes().len(), res.0 * res.1 * res.2);
            assert!((g.total_weight() - HAAR_MASS).abs() <= 1e-12 * HAAR_MASS);
        }
        assert!(so3_grid(0, 1, 1).is_err());
    }

    fn weights(rng: &mut ChaCha8Rng, l: usize, k: usize) -> Vec<f64> {
        (0..(l + 1) * (l + 1) * k).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn random_function_examples() {
        let basis = RadialBasis::new(vec![crate::features::Gaussian { center: 1.0, width: 1e300 }]).unwrap();
        let g = eval_random_function(&[1.0], [0.2, -3.0, 0.5], &basis, 0).unwrap();
        assert!((g.re - 0.5 / PI.sqrt()).abs() < 1e-15 && g.im == 0.0);
        let z = eval_random_function(&[0.0; 18], [0.2, -3.0, 0.5], &RadialBasis::qm7(), 2).unwrap();
        assert_eq!(z, Complex64::new(0.0, 0.0));
        assert!(eval_random_function(&[1.0], [0.0; 3], &basis, 0).is_err());
        assert!(eval_random_function(&[1.0, 2.0], [1.0, 0.0, 0.0], &basis, 0).is_err());
    }

    #[test]
    fn random_function_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let basis = RadialBasis::qm7();
        for _ in 0..10 {
            let w = weights(&mut rng, 4, 2);
            let x: [f64; 3] = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
            let (theta, phi) = ((x[2] / r).acos(), x[1].atan2(x[0]));
            let rad = basis.eval(r);
            let mut want = Complex64::new(0.0, 0.0);
            for l in 0..=4usize {
                for m in -(l as i64)..=(l as i64) {
                    let am = m.unsigned_abs() as usize;
                    let mut ratio = 1.0;
                    for i in (l - am + 1)..=(l + am) {
                        ratio /= i as f64;
                    }
                    let norm = ((2 * l + 1) as f64 / (4.0 * PI) * ratio).sqrt();
                    let mut y = Complex64::from_polar(1.0, am as f64 * phi)
                        * norm
                        * assoc_legendre(l, am, theta.cos()).unwrap();
                    if m < 0 {
                        y = y.conj() * if am % 2 == 0 { 1.0 } else { -1.0 };
                    }
                    for k in 0..2 {
                        want += y * w[SphHarmTable::index(l, m) * 2 + k] * rad[k];
                    }
                }
            }
            let got = eval_random_function(&w, x, &basis, 4).unwrap();
            assert!((got - want).norm() < 1e-12);
        }
    }

    #[test]
    fn quadrature_trivial_cases() {
        let grid = so3_grid(5, 3, 5).unwrap();
        let basis = RadialBasis::qm7();
        let empty = PointCloud::new(vec![], false).unwrap();
        assert_eq!(integral_by_quadrature(&empty, &[1.0; 18], &basis, 2, &grid).unwrap(), 0.0);
        let cloud = PointCloud::new(vec![[1.0, 0.2, 0.0]], false).unwrap();
        assert_eq!(integral_by_quadrature(&cloud, &[0.0; 18], &basis, 2, &grid).unwrap(), 0.0);
    }

    #[test]
    fn quadrature_is_rotation_free_for_constant_harmonic() {
        // L = 0: g(Qx) = w Y00 R(|x|) for every Q
        let basis = RadialBasis::qm7();
        let grid = so3_grid(1, 1, 1).unwrap();
        let cloud = PointCloud::new(vec![[0.5, 0.5, 0.0], [0.0, 0.0, 2.0]], false).unwrap();
        let w = [0.7, -0.3];
        let g = |r: f64| {
            let rad = basis.eval(r);
            (w[0] * rad[0] + w[1] * rad[1]) * 0.5 / PI.sqrt()
        };
        let s = g(0.5f64.sqrt()) + g(2.0);
        let got = integral_by_quadrature(&cloud, &w, &basis, 0, &grid).unwrap();
        assert!((got - HAAR_MASS * s * s).abs() < 1e-12);
    }

    #[test]
    fn orthogonality_examples() {
        let grid = so3_grid(16, 12, 16).unwrap();
        assert!((wigner_product_integral(1, 0, 0, 1, 0, 0) - HAAR_MASS / 3.0).abs() < 1e-12);
        assert!((HAAR_MASS / 3.0 - 26.3189).abs() < 1e-4);
        assert!(wigner_orthogonality_residual(1, 0, 0, 1, 0, 0, &grid).unwrap() <= 1e-9);
        assert_eq!(wigner_product_integral(1, 0, 0, 2, 0, 0), 0.0);
        assert!(wigner_orthogonality_residual(1, 0, 0, 2, 0, 0, &grid).unwrap() <= 1e-9);
        assert!((wigner_product_integral(2, 1, -1, 2, -1, 1) - HAAR_MASS / 5.0).abs() < 1e-12);
        assert!(wigner_orthogonality_residual(2, 1, -1, 2, -1, 1, &grid).unwrap() <= 1e-9);
        assert!((wigner_product_integral(2, 1, 0, 2, -1, 0) + HAAR_MASS / 5.0).abs() < 1e-12);
        assert!(wigner_orthogonality_residual(2, 3, 0, 2, 0, 0, &grid).is_err());
    }

    #[test]
    fn orthogonality_sweep_small() {
        let grid = so3_grid(8, 6, 8).unwrap();
        let sweep = orthogonality_sweep(2, &grid);
        assert_eq!(sweep.tuples, 35 * 35);
        assert!(sweep.max_residual <= 1e-8, "{sweep:?}");
        // too coarse a grid must show aliasing
        let coarse = so3_grid(2, 1, 2).unwrap();
        assert!(orthogonality_sweep(2, &coarse).max_residual > 1e-3);
    }

    #[test]
    fn quadrature_matches_closed_form() {
        use crate::features::{b_tensor, invariant_integral};
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let basis = RadialBasis::qm7();
        for l in 0..=3usize {
            let (a, b, c) = minimal_resolution(l);
            let grid = so3_grid(a, b, c).unwrap();
            let points = (0..3)
                .map(|_| [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)])
                .collect();
            let cloud = PointCloud::new(points, false).unwrap();
            let w = weights(&mut rng, l, 2);
            let closed = invariant_integral(&b_tensor(&cloud, &basis, l).unwrap(), &w).unwrap();
            let quad = integral_by_quadrature(&cloud, &w, &basis, l, &grid).unwrap();
            assert!((closed - quad).abs() <= 1e-9 * closed.abs().max(1.0), "L={l}: {closed} vs {quad}");
        }
    }
}
