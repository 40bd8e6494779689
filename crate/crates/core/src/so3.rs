//! Spherical harmonics, Wigner matrices and Euler-angle rotations.
//!
//! Conventions used throughout the crate:
//!
//! * `Y_l^m` are the complex orthonormal harmonics with the Condon–Shortley
//!   phase, so `Y_l^{-m} = (-1)^m conj(Y_l^m)`.
//! * `D^l[m', m](α, β, γ) = exp(-i m' α) d^l[m', m](β) exp(-i m γ)` with
//!   `d^l(β) = exp(-i β J_y)` in the `|l m>` basis.
//! * [`rotation_from_euler`] returns the rotation under which harmonics obey
//!   `Y_l^m(R v) = Σ_{m'} Y_l^{m'}(v) D^l[m, m']`. That is
//!   `R = R_z(-α) R_y(β) R_z(-γ)`.

use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, Matrix3, Vector3};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Largest band limit accepted anywhere in the crate.
pub const MAX_BAND_LIMIT: usize = 64;

pub fn check_band_limit(band_limit: usize) -> Result<()> {
    if band_limit > MAX_BAND_LIMIT {
        return Err(Error::Config(format!(
            "band limit {band_limit} exceeds the supported maximum {MAX_BAND_LIMIT}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitVector {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl UnitVector {
    /// Normalizes `(x, y, z)`. Fails on a zero or non-finite input.
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self> {
        if !(x.is_finite() && y.is_finite() && z.is_finite()) {
            return Err(Error::Domain("non-finite direction".into()));
        }
        let norm = (x * x + y * y + z * z).sqrt();
        if norm == 0.0 {
            return Err(Error::Domain("zero-length direction".into()));
        }
        Ok(UnitVector {
            x: x / norm,
            y: y / norm,
            z: z / norm,
        })
    }

    pub fn from_array(v: [f64; 3]) -> Result<Self> {
        Self::new(v[0], v[1], v[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dot(self, other: UnitVector) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }
}

/// Associated Legendre function `P_l^m(x)` including the Condon–Shortley
/// phase `(-1)^m`.
pub fn assoc_legendre(l: usize, m: usize, x: f64) -> Result<f64> {
    if m > l {
        return Err(Error::Domain(format!("order {m} exceeds degree {l}")));
    }
    if x.is_nan() || x.abs() > 1.0 + 1e-12 {
        return Err(Error::Domain(format!("argument {x} outside [-1, 1]")));
    }
    let x = x.clamp(-1.0, 1.0);
    let s = ((1.0 - x) * (1.0 + x)).sqrt();

    // P_m^m = (-1)^m (2m-1)!! s^m, built as a running product
    let mut pmm = 1.0;
    for i in 1..=m {
        pmm *= -((2 * i - 1) as f64) * s;
    }
    if l == m {
        return Ok(pmm);
    }
    let mut pm1 = x * (2 * m + 1) as f64 * pmm;
    if l == m + 1 {
        return Ok(pm1);
    }
    let mut plm = 0.0;
    for ll in m + 2..=l {
        plm = (x * (2 * ll - 1) as f64 * pm1 - (ll + m - 1) as f64 * pmm) / (ll - m) as f64;
        pmm = pm1;
        pm1 = plm;
    }
    Ok(plm)
}

/// Legendre polynomial `P_l(x)` by Bonnet's recurrence.
pub fn legendre(l: usize, x: f64) -> f64 {
    let (mut p0, mut p1) = (1.0, x);
    if l == 0 {
        return p0;
    }
    for n in 2..=l {
        let p2 = ((2 * n - 1) as f64 * x * p1 - (n - 1) as f64 * p0) / n as f64;
        p0 = p1;
        p1 = p2;
    }
    p1
}

/// Complex spherical harmonics `Y_l^m(v)` for `0 <= l <= L`, packed by
/// [`SphHarmTable::index`].
#[derive(Debug, Clone, PartialEq)]
pub struct SphHarmTable {
    band_limit: usize,
    values: Vec<Complex64>,
}

impl SphHarmTable {
    pub fn zeros(band_limit: usize) -> Self {
        SphHarmTable {
            band_limit,
            values: vec![Complex64::new(0.0, 0.0); (band_limit + 1) * (band_limit + 1)],
        }
    }

    #[inline]
    pub fn index(l: usize, m: i64) -> usize {
        ((l * l + l) as i64 + m) as usize
    }

    pub fn band_limit(&self) -> usize {
        self.band_limit
    }

    #[inline]
    pub fn get(&self, l: usize, m: i64) -> Complex64 {
        self.values[Self::index(l, m)]
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    /// Recomputes the table in place for a new direction, reusing storage.
    pub fn fill(&mut self, v: UnitVector) {
        let big_l = self.band_limit;
        let z = v.z.clamp(-1.0, 1.0);
        let rho = v.x.hypot(v.y);
        let sin_theta = rho;
        let phase = if rho > 0.0 {
            Complex64::new(v.x / rho, v.y / rho)
        } else {
            Complex64::new(1.0, 0.0)
        };

        // Orthonormalized P̄_l^m (normalization folded into the recurrence).
        let mut pmm = 0.5 / PI.sqrt();
        let mut eim = Complex64::new(1.0, 0.0);
        for m in 0..=big_l {
            if m > 0 {
                pmm *= -((2 * m + 1) as f64 / (2 * m) as f64).sqrt() * sin_theta;
                eim *= phase;
            }
            self.set_pair(m, m, pmm, eim);
            if m == big_l {
                break;
            }
            let mut p_prev = pmm;
            let mut p_cur = ((2 * m + 3) as f64).sqrt() * z * pmm;
            self.set_pair(m + 1, m, p_cur, eim);
            for l in m + 2..=big_l {
                let lf = l as f64;
                let mf = m as f64;
                let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
                let b = (((lf - 1.0) * (lf - 1.0) - mf * mf) / (4.0 * (lf - 1.0) * (lf - 1.0) - 1.0))
                    .sqrt();
                let p_next = a * (z * p_cur - b * p_prev);
                p_prev = p_cur;
                p_cur = p_next;
                self.set_pair(l, m, p_cur, eim);
            }
        }
    }

    #[inline]
    fn set_pair(&mut self, l: usize, m: usize, p: f64, eim: Complex64) {
        let y = eim * p;
        self.values[Self::index(l, m as i64)] = y;
        if m > 0 {
            let sign = if m.is_multiple_of(2) { 1.0 } else { -1.0 };
            self.values[Self::index(l, -(m as i64))] = y.conj() * sign;
        }
    }
}

pub fn sph_harm_table(v: UnitVector, band_limit: usize) -> Result<SphHarmTable> {
    check_band_limit(band_limit)?;
    let mut table = SphHarmTable::zeros(band_limit);
    table.fill(v);
    Ok(table)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EulerAngles {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl EulerAngles {
    /// Wraps `alpha` and `gamma` into `[0, 2π)`; `beta` must lie in `[0, π]`.
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        if !(alpha.is_finite() && beta.is_finite() && gamma.is_finite()) {
            return Err(Error::Domain("non-finite Euler angle".into()));
        }
        if !(0.0..=PI).contains(&beta) {
            return Err(Error::Domain(format!("beta = {beta} outside [0, π]")));
        }
        Ok(EulerAngles {
            alpha: alpha.rem_euclid(TAU),
            beta,
            gamma: gamma.rem_euclid(TAU),
        })
    }

    pub fn identity() -> Self {
        EulerAngles {
            alpha: 0.0,
            beta: 0.0,
            gamma: 0.0,
        }
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    let mut acc = 1.0;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

fn jacobi(n: usize, a: f64, b: f64, x: f64) -> f64 {
    let mut p0 = 1.0;
    if n == 0 {
        return p0;
    }
    let mut p1 = (a + 1.0) + (a + b + 2.0) * (x - 1.0) / 2.0;
    for k in 2..=n {
        let kf = k as f64;
        let c = 2.0 * kf + a + b;
        let lhs = 2.0 * kf * (kf + a + b) * (c - 2.0);
        let p2 = ((c - 1.0) * (c * (c - 2.0) * x + a * a - b * b) * p1
            - 2.0 * (kf + a - 1.0) * (kf + b - 1.0) * c * p0)
            / lhs;
        p0 = p1;
        p1 = p2;
    }
    p1
}

fn wigner_d_element(l: usize, mp: i64, m: i64, beta: f64) -> f64 {
    let li = l as i64;
    let candidates = [li + m, li - m, li + mp, li - mp];
    let k = *candidates.iter().min().unwrap();
    let (a, lambda) = if k == li + m {
        (mp - m, mp - m)
    } else if k == li - m || k == li + mp {
        (m - mp, 0)
    } else {
        (mp - m, mp - m)
    };
    let b = 2 * li - 2 * k - a;
    let (k, a, b) = (k as usize, a as usize, b as usize);
    let (half_sin, half_cos) = (0.5 * beta).sin_cos();
    let norm = (binomial(2 * l - k, k + a) / binomial(k + b, b)).sqrt();
    let sign = if lambda.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
    sign * norm
        * half_sin.powi(a as i32)
        * half_cos.powi(b as i32)
        * jacobi(k, a as f64, b as f64, beta.cos())
}

/// Real little-d matrix `d^l(β)`; entry `(m' + l, m + l)` holds `d^l[m', m]`.
pub fn wigner_d_small(l: usize, beta: f64) -> DMatrix<f64> {
    let n = 2 * l + 1;
    let li = l as i64;
    DMatrix::from_fn(n, n, |r, c| {
        wigner_d_element(l, r as i64 - li, c as i64 - li, beta)
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct WignerD {
    degree: usize,
    entries: DMatrix<Complex64>,
}

impl WignerD {
    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Entry `D[m', m]`.
    #[inline]
    pub fn get(&self, mp: i64, m: i64) -> Complex64 {
        let l = self.degree as i64;
        self.entries[((mp + l) as usize, (m + l) as usize)]
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.entries
    }
}

#[allow(non_snake_case)]
pub fn wigner_D(l: usize, angles: EulerAngles) -> WignerD {
    let small = wigner_d_small(l, angles.beta);
    let li = l as i64;
    let entries = DMatrix::from_fn(2 * l + 1, 2 * l + 1, |r, c| {
        let mp = (r as i64 - li) as f64;
        let m = (c as i64 - li) as f64;
        Complex64::from_polar(1.0, -mp * angles.alpha - m * angles.gamma) * small[(r, c)]
    });
    WignerD { degree: l, entries }
}

/// Proper rotation, `RᵀR = I`, `det R = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(pub Matrix3<f64>);

impl RotationMatrix {
    pub fn identity() -> Self {
        RotationMatrix(Matrix3::identity())
    }

    #[inline]
    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let v = self.0 * Vector3::new(p[0], p[1], p[2]);
        [v.x, v.y, v.z]
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }
}

fn rot_z(t: f64) -> Matrix3<f64> {
    let (s, c) = t.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn rot_y(t: f64) -> Matrix3<f64> {
    let (s, c) = t.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

/// `R_z(-α) R_y(β) R_z(-γ)`: the rotation whose action on harmonics is
/// `D^l(α, β, γ)` row-wise (see module docs).
pub fn rotation_from_euler(angles: EulerAngles) -> RotationMatrix {
    RotationMatrix(rot_z(-angles.alpha) * rot_y(angles.beta) * rot_z(-angles.gamma))
}

/// Haar-uniform random Euler angles.
pub fn random_euler<R: rand::Rng + ?Sized>(rng: &mut R) -> EulerAngles {
    let alpha = rng.random::<f64>() * TAU;
    let cos_beta = 2.0 * rng.random::<f64>() - 1.0;
    let gamma = rng.random::<f64>() * TAU;
    EulerAngles {
        alpha,
        beta: cos_beta.clamp(-1.0, 1.0).acos(),
        gamma,
    }
}
