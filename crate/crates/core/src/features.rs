//! Rotation-invariant random features.
//!
//! A random function is `g(x) = Σ_{k,l,m} w[l,m,k] Y_l^m(x̂) R_k(|x|)` with
//! i.i.d. Gaussian weights. The feature of a cloud `p` is
//! `sin(∫_{SO(3)} <Q∘p, g>² dQ)` under the Haar measure of total mass 8π².
//! The integral reduces to a contraction of `w ⊗ w` with a per-sample tensor
//! `B[l, m, k1, k2]` that depends only on the cloud; it is computed once per
//! sample and shared by every random function.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::so3::{check_band_limit, RotationMatrix, SphHarmTable, UnitVector};

/// Points closer than this to the origin have no usable direction.
pub const ZERO_NORM: f64 = 1e-10;

/// Identifier of the weight generator, stored in model bundles.
///
/// The stream is `ChaCha20Rng::seed_from_u64(seed)` feeding
/// `rand_distr::StandardNormal` (ziggurat), scaled by σ. Draws are taken with
/// the random-function index outermost, then `l`, then `m` from `-l` to `l`,
/// then the radial index `k`.
pub const RNG_ALGORITHM: &str = "chacha20-seed_from_u64/standard-normal-ziggurat/order-j-l-m-k";

const FWHM_TO_SIGMA: f64 = 0.424_660_900_144_009_5; // 1 / (2 sqrt(2 ln 2))

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<[f64; 3]>,
    normalize_mass: bool,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>, normalize_mass: bool) -> Result<Self> {
        if let Some(index) = points
            .iter()
            .position(|p| !p.iter().all(|c| c.is_finite()))
        {
            return Err(Error::NonFinite { index });
        }
        if normalize_mass && points.is_empty() {
            return Err(Error::Config(
                "a mass-normalized cloud needs at least one point".into(),
            ));
        }
        Ok(PointCloud {
            points,
            normalize_mass,
        })
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn normalize_mass(&self) -> bool {
        self.normalize_mass
    }

    /// Weight carried by each point of the data function.
    pub fn mass_weight(&self) -> f64 {
        mass_weight(self.points.len(), self.normalize_mass)
    }

    pub fn rotated(&self, rotation: &RotationMatrix) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|&p| rotation.apply(p)).collect(),
            normalize_mass: self.normalize_mass,
        }
    }
}

fn mass_weight(n: usize, normalize: bool) -> f64 {
    if normalize && n > 0 {
        1.0 / n as f64
    } else {
        1.0
    }
}

/// Point cloud with one integer label (nuclear charge) per point.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPointCloud {
    points: Vec<[f64; 3]>,
    charges: Vec<i32>,
}

impl LabeledPointCloud {
    pub fn new(points: Vec<[f64; 3]>, charges: Vec<i32>) -> Result<Self> {
        if points.len() != charges.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} charges", points.len()),
                found: format!("{}", charges.len()),
            });
        }
        if let Some(index) = points
            .iter()
            .position(|p| !p.iter().all(|c| c.is_finite()))
        {
            return Err(Error::NonFinite { index });
        }
        Ok(LabeledPointCloud { points, charges })
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn charges(&self) -> &[i32] {
        &self.charges
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn rotated(&self, rotation: &RotationMatrix) -> LabeledPointCloud {
        LabeledPointCloud {
            points: self.points.iter().map(|&p| rotation.apply(p)).collect(),
            charges: self.charges.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub center: f64,
    pub width: f64,
}

/// Sum-of-Gaussians radial profiles `R_k(r) = exp(-(r - c_k)² / (2 s_k²))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialBasis {
    gaussians: Vec<Gaussian>,
}

impl RadialBasis {
    pub fn new(gaussians: Vec<Gaussian>) -> Result<Self> {
        if gaussians.is_empty() {
            return Err(Error::Config("radial basis needs at least one function".into()));
        }
        for g in &gaussians {
            if !(g.width > 0.0 && g.width.is_finite() && g.center.is_finite()) {
                return Err(Error::Config(format!(
                    "radial gaussian (center {}, width {}) must have a finite positive width",
                    g.center, g.width
                )));
            }
        }
        Ok(RadialBasis { gaussians })
    }

    /// Gaussians given as `(center, full width at half maximum)`.
    pub fn from_fwhm(spec: &[(f64, f64)]) -> Result<Self> {
        Self::new(
            spec.iter()
                .map(|&(center, fwhm)| Gaussian {
                    center,
                    width: fwhm * FWHM_TO_SIGMA,
                })
                .collect(),
        )
    }

    /// Molecular preset: two Gaussians at 1 Å with FWHM 2 and 4.
    pub fn qm7() -> Self {
        Self::from_fwhm(&[(1.0, 2.0), (1.0, 4.0)]).expect("valid preset")
    }

    /// Shape preset: Gaussians at 0, 0.5 and 1 with width 0.75.
    pub fn modelnet() -> Self {
        Self::new(
            [0.0, 0.5, 1.0]
                .iter()
                .map(|&center| Gaussian { center, width: 0.75 })
                .collect(),
        )
        .expect("valid preset")
    }

    /// Same centers with every width multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.gaussians
                .iter()
                .map(|g| Gaussian {
                    center: g.center,
                    width: g.width * factor,
                })
                .collect(),
        )
    }

    pub fn gaussians(&self) -> &[Gaussian] {
        &self.gaussians
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn eval(&self, r: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.eval_into(r, &mut out);
        out
    }

    pub fn eval_into(&self, r: f64, out: &mut [f64]) {
        for (o, g) in out.iter_mut().zip(&self.gaussians) {
            let d = r - g.center;
            *o = (-d * d / (2.0 * g.width * g.width)).exp();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub band_limit: usize,
    pub radial: RadialBasis,
    pub weight_sigma: f64,
    pub n_features: usize,
    pub seed: u64,
    pub normalize_mass: bool,
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        check_band_limit(self.band_limit)?;
        RadialBasis::new(self.radial.gaussians.clone())?;
        if !(self.weight_sigma >= 0.0 && self.weight_sigma.is_finite()) {
            return Err(Error::Config(format!(
                "weight sigma must be finite and non-negative, got {}",
                self.weight_sigma
            )));
        }
        if self.n_features == 0 {
            return Err(Error::Config("at least one random feature is required".into()));
        }
        Ok(())
    }

    /// Number of weights per random function, `(L+1)² K`.
    pub fn function_len(&self) -> usize {
        (self.band_limit + 1) * (self.band_limit + 1) * self.radial.len()
    }
}

/// The random weights of `D` functions, laid out `[j][l, m][k]` with the
/// `(l, m)` pair packed as in [`SphHarmTable::index`].
#[derive(Debug, Clone, PartialEq)]
pub struct RandomFunctionSet {
    config: FeatureConfig,
    weights: Vec<f64>,
}

impl RandomFunctionSet {
    pub fn from_parts(config: FeatureConfig, weights: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let want = config.n_features * config.function_len();
        if weights.len() != want {
            return Err(Error::ShapeMismatch {
                expected: format!("{want} weights"),
                found: format!("{}", weights.len()),
            });
        }
        Ok(RandomFunctionSet { config, weights })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.config
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn n_functions(&self) -> usize {
        self.config.n_features
    }

    pub fn function(&self, j: usize) -> &[f64] {
        let stride = self.config.function_len();
        &self.weights[j * stride..(j + 1) * stride]
    }

    pub fn weight(&self, j: usize, l: usize, m: i64, k: usize) -> f64 {
        self.function(j)[SphHarmTable::index(l, m) * self.config.radial.len() + k]
    }
}

pub fn sample_random_weights(config: &FeatureConfig) -> Result<RandomFunctionSet> {
    config.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let count = config.n_features * config.function_len();
    let sigma = config.weight_sigma;
    let weights = (0..count)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            sigma * z
        })
        .collect();
    RandomFunctionSet::from_parts(config.clone(), weights)
}

/// Per-sample invariant tensor `B[l, m, k1, k2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BTensor {
    band_limit: usize,
    n_radial: usize,
    entries: Vec<f64>,
    imag_residue: f64,
    pub sample_id: Option<String>,
}

impl BTensor {
    fn zeros(band_limit: usize, n_radial: usize) -> Self {
        BTensor {
            band_limit,
            n_radial,
            entries: vec![0.0; (band_limit + 1) * (band_limit + 1) * n_radial * n_radial],
            imag_residue: 0.0,
            sample_id: None,
        }
    }

    pub fn band_limit(&self) -> usize {
        self.band_limit
    }

    pub fn n_radial(&self) -> usize {
        self.n_radial
    }

    #[inline]
    pub fn get(&self, l: usize, m: i64, k1: usize, k2: usize) -> f64 {
        let k = self.n_radial;
        self.entries[(SphHarmTable::index(l, m) * k + k1) * k + k2]
    }

    /// Flat entries, `(l, m)` outermost, then `k1`, then `k2`.
    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// Largest imaginary part seen before the real cast.
    pub fn imag_residue(&self) -> f64 {
        self.imag_residue
    }

    fn accumulate(&mut self, other: &BTensor) {
        for (a, b) in self.entries.iter_mut().zip(&other.entries) {
            *a += b;
        }
        self.imag_residue = self.imag_residue.max(other.imag_residue);
    }
}

pub fn b_tensor(cloud: &PointCloud, basis: &RadialBasis, band_limit: usize) -> Result<BTensor> {
    check_band_limit(band_limit)?;
    b_tensor_raw(cloud.points(), cloud.mass_weight(), basis, band_limit)
}

fn b_tensor_raw(
    points: &[[f64; 3]],
    mass: f64,
    basis: &RadialBasis,
    band_limit: usize,
) -> Result<BTensor> {
    let n = points.len();
    let k = basis.len();
    let nl = band_limit + 1;
    let mut out = BTensor::zeros(band_limit, k);
    if n == 0 {
        return Ok(out);
    }

    // Canonical point order makes the result bitwise independent of input order.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let (pa, pb) = (&points[a], &points[b]);
        pa[0].total_cmp(&pb[0])
            .then(pa[1].total_cmp(&pb[1]))
            .then(pa[2].total_cmp(&pb[2]))
    });

    let mut tables = Vec::with_capacity(n);
    let mut radial = vec![0.0; n * k];
    for (slot, &i) in order.iter().enumerate() {
        let p = &points[i];
        if !p.iter().all(|c| c.is_finite()) {
            return Err(Error::NonFinite { index: i });
        }
        let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
        if r < ZERO_NORM {
            return Err(Error::ZeroNormPoint { index: i });
        }
        let mut table = SphHarmTable::zeros(band_limit);
        table.fill(UnitVector::new(p[0], p[1], p[2])?);
        tables.push(table);
        basis.eval_into(r, &mut radial[slot * k..(slot + 1) * k]);
    }

    // acc[l][k1][k2] = Σ_{j1,j2} R_k1(j1) R_k2(j2) Σ_m' (-1)^m' Y_m'(j1) Y_-m'(j2)
    let zero = Complex64::new(0.0, 0.0);
    let mut acc = vec![zero; nl * k * k];
    let mut partial = vec![zero; nl * k];
    for j1 in 0..n {
        partial.fill(zero);
        let a = tables[j1].values();
        for j2 in 0..n {
            let b = tables[j2].values();
            let r2 = &radial[j2 * k..(j2 + 1) * k];
            for l in 0..nl {
                let base = l * l + l;
                let mut s = a[base] * b[base];
                for mp in 1..=l {
                    let plus = a[base + mp] * b[base - mp];
                    let minus = a[base - mp] * b[base + mp];
                    if mp % 2 == 0 {
                        s += plus + minus;
                    } else {
                        s -= plus + minus;
                    }
                }
                for (k2, &r) in r2.iter().enumerate() {
                    partial[l * k + k2] += s * r;
                }
            }
        }
        let r1 = &radial[j1 * k..(j1 + 1) * k];
        for l in 0..nl {
            for (k1, &ra) in r1.iter().enumerate() {
                for k2 in 0..k {
                    acc[(l * k + k1) * k + k2] += partial[l * k + k2] * ra;
                }
            }
        }
    }

    let mut radial_sums = vec![0.0; k];
    for i in 0..n {
        for kk in 0..k {
            radial_sums[kk] += radial[i * k + kk].abs();
        }
    }

    let mass2 = mass * mass;
    for l in 0..nl {
        let factor = 8.0 * PI * PI / (2 * l + 1) as f64 * mass2;
        for k1 in 0..k {
            for k2 in 0..k {
                let v = acc[(l * k + k1) * k + k2] * factor;
                let bound = 1e-10 * (2.0 * PI * mass2 * radial_sums[k1] * radial_sums[k2]).max(1.0);
                if v.im.abs() > bound {
                    return Err(Error::ImaginaryResidue {
                        value: v.im,
                        bound,
                    });
                }
                out.imag_residue = out.imag_residue.max(v.im.abs());
                for m in -(l as i64)..=(l as i64) {
                    let sign = if m.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
                    out.entries[(SphHarmTable::index(l, m) * k + k1) * k + k2] = sign * v.re;
                }
            }
        }
    }
    Ok(out)
}

/// `Σ_{l,m,k1,k2} w[l,m,k1] w[l,-m,k2] B[l,m,k1,k2]`, the closed form of
/// `∫ <Q∘p, g>² dQ`.
pub fn invariant_integral(b: &BTensor, weights: &[f64]) -> Result<f64> {
    let k = b.n_radial;
    let nl = b.band_limit + 1;
    let want = nl * nl * k;
    if weights.len() != want {
        return Err(Error::ShapeMismatch {
            expected: format!("{want} weights for L = {}, K = {k}", b.band_limit),
            found: format!("{}", weights.len()),
        });
    }
    let mut total = 0.0;
    for l in 0..nl {
        let li = l as i64;
        for m in -li..=li {
            let wa = &weights[SphHarmTable::index(l, m) * k..][..k];
            let wb = &weights[SphHarmTable::index(l, -m) * k..][..k];
            let bb = &b.entries[SphHarmTable::index(l, m) * k * k..][..k * k];
            for k1 in 0..k {
                let mut row = 0.0;
                for k2 in 0..k {
                    row += wb[k2] * bb[k1 * k + k2];
                }
                total += wa[k1] * row;
            }
        }
    }
    Ok(total)
}

fn check_tensor_matches(b: &BTensor, config: &FeatureConfig) -> Result<()> {
    if b.band_limit != config.band_limit || b.n_radial != config.radial.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("L = {}, K = {}", config.band_limit, config.radial.len()),
            found: format!("L = {}, K = {}", b.band_limit, b.n_radial),
        });
    }
    Ok(())
}

/// `sin` of the invariant integral of cloud `p` against random function `j`.
pub fn feature(cloud: &PointCloud, rfs: &RandomFunctionSet, j: usize) -> Result<f64> {
    let config = rfs.config();
    let b = b_tensor(cloud, &config.radial, config.band_limit)?;
    feature_from_tensor(&b, rfs, j)
}

pub fn feature_from_tensor(b: &BTensor, rfs: &RandomFunctionSet, j: usize) -> Result<f64> {
    check_tensor_matches(b, rfs.config())?;
    Ok(invariant_integral(b, rfs.function(j))?.sin())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMeta {
    pub function: usize,
    pub charges: Option<(i32, i32)>,
}

impl ColumnMeta {
    pub fn name(&self) -> String {
        match self.charges {
            Some((a, b)) => format!("f{}_{}_{}", self.function, a, b),
            None => format!("f{}", self.function),
        }
    }
}

/// Dense row-major feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub values: Vec<f64>,
    pub column_meta: Vec<ColumnMeta>,
    pub row_ids: Vec<String>,
    /// Points dropped for lying at a centering atom (element encoding only).
    pub dropped_points: usize,
}

impl FeatureMatrix {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n_cols + j]
    }

    pub fn to_dmatrix(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_row_slice(self.n_rows, self.n_cols, &self.values)
    }

    pub fn with_row_ids(mut self, ids: Vec<String>) -> Result<Self> {
        if ids.len() != self.n_rows {
            return Err(Error::ShapeMismatch {
                expected: format!("{} row ids", self.n_rows),
                found: format!("{}", ids.len()),
            });
        }
        self.row_ids = ids;
        Ok(self)
    }
}

fn plain_columns(d: usize) -> Vec<ColumnMeta> {
    (0..d)
        .map(|function| ColumnMeta {
            function,
            charges: None,
        })
        .collect()
}

pub fn feature_matrix(samples: &[PointCloud], rfs: &RandomFunctionSet) -> Result<FeatureMatrix> {
    feature_matrix_with(Execution::default(), samples, rfs)
}

pub fn feature_matrix_with(
    exec: Execution,
    samples: &[PointCloud],
    rfs: &RandomFunctionSet,
) -> Result<FeatureMatrix> {
    let config = rfs.config();
    check_band_limit(config.band_limit)?;
    let d = rfs.n_functions();
    let rows = exec::try_map_indexed(exec, samples.len(), |i| {
        let b = b_tensor(&samples[i], &config.radial, config.band_limit)
            .map_err(|e| e.in_sample(i))?;
        (0..d)
            .map(|j| feature_from_tensor(&b, rfs, j))
            .collect::<Result<Vec<f64>>>()
            .map_err(|e| e.in_sample(i))
    })?;
    Ok(FeatureMatrix {
        n_rows: samples.len(),
        n_cols: d,
        values: rows.concat(),
        column_meta: plain_columns(d),
        row_ids: (0..samples.len()).map(|i| i.to_string()).collect(),
        dropped_points: 0,
    })
}

struct CenteredCloud {
    block: usize,
    points: Vec<[f64; 3]>,
}

fn vocab_index(vocab: &[i32], charge: i32) -> Result<usize> {
    vocab
        .iter()
        .position(|&c| c == charge)
        .ok_or(Error::UnknownCharge(charge))
}

/// One cloud per (center atom, neighbor element): the neighbor-element atoms
/// shifted so the center sits at the origin. The center itself and any point
/// within [`ZERO_NORM`] of it are dropped; the drop count is returned.
fn centered_clouds(mol: &LabeledPointCloud, vocab: &[i32]) -> Result<(Vec<CenteredCloud>, usize)> {
    let v = vocab.len();
    let indices = mol
        .charges()
        .iter()
        .map(|&c| vocab_index(vocab, c))
        .collect::<Result<Vec<_>>>()?;
    let mut clouds = Vec::new();
    let mut dropped = 0;
    for (h, center) in mol.points().iter().enumerate() {
        let mut by_element: Vec<Vec<[f64; 3]>> = vec![Vec::new(); v];
        for (i, p) in mol.points().iter().enumerate() {
            if i == h {
                continue;
            }
            let shifted = [p[0] - center[0], p[1] - center[1], p[2] - center[2]];
            let r = (shifted[0] * shifted[0] + shifted[1] * shifted[1] + shifted[2] * shifted[2]).sqrt();
            if r < ZERO_NORM {
                dropped += 1;
                continue;
            }
            by_element[indices[i]].push(shifted);
        }
        for (b, points) in by_element.into_iter().enumerate() {
            clouds.push(CenteredCloud {
                block: indices[h] * v + b,
                points,
            });
        }
    }
    Ok((clouds, dropped))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElementRow {
    pub values: Vec<f64>,
    pub dropped_points: usize,
}

/// Element-type encoded features of one molecule, `D · |vocab|²` columns.
///
/// Column `(a · V + b) · D + j` holds, for vocabulary entries `c1 = vocab[a]`
/// and `c2 = vocab[b]`, the sum over atoms of charge `c1` of feature `j` of
/// the charge-`c2` atoms re-centered on that atom.
pub fn element_encoded_features(
    mol: &LabeledPointCloud,
    rfs: &RandomFunctionSet,
    vocab: &[i32],
) -> Result<ElementRow> {
    let config = rfs.config();
    check_band_limit(config.band_limit)?;
    let d = rfs.n_functions();
    let v = vocab.len();
    let (clouds, dropped) = centered_clouds(mol, vocab)?;
    let mut values = vec![0.0; v * v * d];
    for cloud in clouds {
        if cloud.points.is_empty() {
            continue;
        }
        let mass = mass_weight(cloud.points.len(), config.normalize_mass);
        let b = b_tensor_raw(&cloud.points, mass, &config.radial, config.band_limit)?;
        let block = &mut values[cloud.block * d..(cloud.block + 1) * d];
        for (j, out) in block.iter_mut().enumerate() {
            *out += invariant_integral(&b, rfs.function(j))?.sin();
        }
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} coincident points during element encoding");
    }
    Ok(ElementRow {
        values,
        dropped_points: dropped,
    })
}

pub fn element_columns(d: usize, vocab: &[i32]) -> Vec<ColumnMeta> {
    let mut meta = Vec::with_capacity(d * vocab.len() * vocab.len());
    for &c1 in vocab {
        for &c2 in vocab {
            for function in 0..d {
                meta.push(ColumnMeta {
                    function,
                    charges: Some((c1, c2)),
                });
            }
        }
    }
    meta
}

pub fn element_feature_matrix(
    mols: &[LabeledPointCloud],
    rfs: &RandomFunctionSet,
    vocab: &[i32],
) -> Result<FeatureMatrix> {
    element_feature_matrix_with(Execution::default(), mols, rfs, vocab)
}

pub fn element_feature_matrix_with(
    exec: Execution,
    mols: &[LabeledPointCloud],
    rfs: &RandomFunctionSet,
    vocab: &[i32],
) -> Result<FeatureMatrix> {
    let d = rfs.n_functions();
    let rows = exec::try_map_indexed(exec, mols.len(), |i| {
        element_encoded_features(&mols[i], rfs, vocab).map_err(|e| e.in_sample(i))
    })?;
    let dropped_points = rows.iter().map(|r| r.dropped_points).sum();
    Ok(FeatureMatrix {
        n_rows: mols.len(),
        n_cols: d * vocab.len() * vocab.len(),
        values: rows.into_iter().flat_map(|r| r.values).collect(),
        column_meta: element_columns(d, vocab),
        row_ids: (0..mols.len()).map(|i| i.to_string()).collect(),
        dropped_points,
    })
}

/// Element-encoded `B` tensors summed over centers and flattened block by
/// block; the design matrix row of the linear-in-`B` baseline.
pub fn element_encoded_b(
    mol: &LabeledPointCloud,
    basis: &RadialBasis,
    band_limit: usize,
    vocab: &[i32],
    normalize_mass: bool,
) -> Result<Vec<f64>> {
    check_band_limit(band_limit)?;
    let v = vocab.len();
    let (clouds, _) = centered_clouds(mol, vocab)?;
    let mut blocks: Vec<BTensor> = (0..v * v)
        .map(|_| BTensor::zeros(band_limit, basis.len()))
        .collect();
    for cloud in clouds {
        if cloud.points.is_empty() {
            continue;
        }
        let mass = mass_weight(cloud.points.len(), normalize_mass);
        let b = b_tensor_raw(&cloud.points, mass, basis, band_limit)?;
        blocks[cloud.block].accumulate(&b);
    }
    Ok(blocks.into_iter().flat_map(|b| b.entries).collect())
}
