//! Dataset readers and writers, train/validation/test splits, feature matrix
//! CSV files and model bundles.
//!
//! # Molecules (extended XYZ)
//!
//! Each molecule is an atom-count line, a property line of whitespace
//! separated `key=value` tokens, then one `Symbol x y z` line per atom.
//! `energy` (case-insensitive) is the target and `id` names the record;
//! other tokens are ignored. A numeric atomic number is accepted in place of
//! the symbol and extra atom columns are ignored. Blank lines between
//! molecules are skipped.
//!
//! # Shapes
//!
//! Each record is a header line `id class N` followed by `N` lines `x y z`.
//!
//! # Model bundles
//!
//! A bundle is one JSON document:
//!
//! ```text
//! { "format": "rotsig-model", "version": 1,
//!   "header": { config, rng_algorithm, seed, encoding, model, notes },
//!   "blocks": { name: { "shape": [..], "crc32": u32, "data": base64 } } }
//! ```
//!
//! Every block is a row-major array of little-endian `f64`, base64 encoded,
//! with the CRC-32 of the raw bytes. Blocks are `random_weights`
//! (`[D, (L+1)² K]`), and either `beta` (`[d]`) for regression or `weights`
//! (`[C, d]`) and `intercepts` (`[C]`) for classification.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use base64::Engine;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::features::{
    element_feature_matrix_with, feature_matrix_with, ColumnMeta, FeatureConfig, FeatureMatrix,
    LabeledPointCloud, PointCloud, RandomFunctionSet, RNG_ALGORITHM,
};
use crate::solvers::{ClassifierWeights, LinearModel};

const ELEMENTS: [&str; 54] = [
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne", "Na", "Mg", "Al", "Si", "P", "S", "Cl",
    "Ar", "K", "Ca", "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga", "Ge", "As",
    "Se", "Br", "Kr", "Rb", "Sr", "Y", "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In",
    "Sn", "Sb", "Te", "I", "Xe",
];

/// Atomic number of an element symbol or of a positive integer string.
pub fn element_charge(token: &str) -> Option<i32> {
    if let Ok(z) = token.parse::<i32>() {
        return (z > 0).then_some(z);
    }
    ELEMENTS
        .iter()
        .position(|s| *s == token)
        .map(|i| i as i32 + 1)
}

pub fn element_symbol(charge: i32) -> Option<&'static str> {
    usize::try_from(charge)
        .ok()
        .and_then(|z| z.checked_sub(1))
        .and_then(|i| ELEMENTS.get(i).copied())
}

fn parse_error(source: &str, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: source.to_string(),
        line,
        msg: msg.into(),
    }
}

fn read_text(path: &Path) -> Result<String> {
    let mut text = String::new();
    std::fs::File::open(path)?.read_to_string(&mut text)?;
    Ok(text)
}

fn parse_coord(source: &str, line: usize, token: &str) -> Result<f64> {
    match token.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(parse_error(source, line, format!("non-numeric coordinate `{token}`"))),
    }
}

fn check_id(id: &str) -> Result<()> {
    if id.is_empty() || id.contains(char::is_whitespace) || id.contains('=') || id.contains(',') {
        return Err(Error::Config(format!(
            "record id `{id}` must be non-empty without whitespace, `=` or `,`"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MoleculeRecord {
    pub id: String,
    pub charges: Vec<i32>,
    pub coordinates: Vec<[f64; 3]>,
    pub target: Option<f64>,
}

impl MoleculeRecord {
    pub fn to_cloud(&self) -> Result<LabeledPointCloud> {
        LabeledPointCloud::new(self.coordinates.clone(), self.charges.clone())
    }
}

pub fn parse_xyz(text: &str, source: &str) -> Result<Vec<MoleculeRecord>> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut out = Vec::new();
    loop {
        let (count_no, count_line) = loop {
            match lines.next() {
                None => return Ok(out),
                Some((_, l)) if l.trim().is_empty() => continue,
                Some(found) => break found,
            }
        };
        let n: usize = count_line.trim().parse().map_err(|_| {
            parse_error(source, count_no, format!("expected an atom count, found `{}`", count_line.trim()))
        })?;
        let (prop_no, props) = lines
            .next()
            .ok_or_else(|| parse_error(source, count_no + 1, "missing property line"))?;
        let mut id = None;
        let mut target = None;
        for token in props.split_whitespace() {
            let Some((key, value)) = token.split_once('=') else {
                continue;
            };
            match key.to_ascii_lowercase().as_str() {
                "energy" => {
                    let v = value.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                        parse_error(source, prop_no, format!("non-numeric energy `{value}`"))
                    })?;
                    target = Some(v);
                }
                "id" => id = Some(value.to_string()),
                _ => {}
            }
        }
        let mut charges = Vec::with_capacity(n);
        let mut coordinates = Vec::with_capacity(n);
        let mut last = prop_no;
        for a in 0..n {
            let (no, line) = lines.next().ok_or_else(|| {
                parse_error(source, last + 1, format!("expected {n} atoms, found {a}"))
            })?;
            last = no;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() < 4 {
                return Err(parse_error(source, no, "atom line needs `Symbol x y z`"));
            }
            let charge = element_charge(fields[0])
                .ok_or_else(|| parse_error(source, no, format!("unknown element `{}`", fields[0])))?;
            charges.push(charge);
            coordinates.push([
                parse_coord(source, no, fields[1])?,
                parse_coord(source, no, fields[2])?,
                parse_coord(source, no, fields[3])?,
            ]);
        }
        out.push(MoleculeRecord {
            id: id.unwrap_or_else(|| out.len().to_string()),
            charges,
            coordinates,
            target,
        });
    }
}

pub fn read_xyz_dataset(path: &Path) -> Result<Vec<MoleculeRecord>> {
    parse_xyz(&read_text(path)?, &path.display().to_string())
}

pub fn format_xyz(records: &[MoleculeRecord]) -> Result<String> {
    let mut out = String::new();
    for rec in records {
        check_id(&rec.id)?;
        if rec.charges.len() != rec.coordinates.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} coordinates", rec.charges.len()),
                found: format!("{}", rec.coordinates.len()),
            });
        }
        out.push_str(&format!("{}\nid={}", rec.charges.len(), rec.id));
        if let Some(t) = rec.target {
            out.push_str(&format!(" energy={t:.16e}"));
        }
        out.push('\n');
        for (&c, p) in rec.charges.iter().zip(&rec.coordinates) {
            let sym = element_symbol(c).map(str::to_string).unwrap_or_else(|| c.to_string());
            out.push_str(&format!("{sym} {:.16e} {:.16e} {:.16e}\n", p[0], p[1], p[2]));
        }
    }
    Ok(out)
}

pub fn write_xyz_dataset(path: &Path, records: &[MoleculeRecord]) -> Result<()> {
    std::fs::write(path, format_xyz(records)?)?;
    Ok(())
}

/// Per-element reference energies, one `Symbol value` (or `Z value`) pair
/// per line; `#` starts a comment.
pub fn parse_reference_table(text: &str, source: &str) -> Result<HashMap<i32, f64>> {
    let mut table = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(parse_error(source, i + 1, "expected `Symbol energy`"));
        }
        let z = element_charge(fields[0])
            .ok_or_else(|| parse_error(source, i + 1, format!("unknown element `{}`", fields[0])))?;
        let e = parse_coord(source, i + 1, fields[1])?;
        table.insert(z, e);
    }
    Ok(table)
}

/// Atomization-energy targets: subtract the summed per-atom references
/// from every present target.
pub fn apply_reference_energies(records: &mut [MoleculeRecord], table: &HashMap<i32, f64>) -> Result<()> {
    for (row, rec) in records.iter_mut().enumerate() {
        let Some(t) = rec.target else { continue };
        let mut reference = 0.0;
        for &c in &rec.charges {
            reference += table
                .get(&c)
                .ok_or_else(|| Error::UnknownCharge(c).in_sample(row))?;
        }
        rec.target = Some(t - reference);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeRecord {
    pub id: String,
    pub points: Vec<[f64; 3]>,
    pub class_label: i64,
}

/// Moves the centroid to the origin and scales the farthest point onto the
/// unit sphere.
pub fn normalize_shape(points: &mut [[f64; 3]]) {
    if points.is_empty() {
        return;
    }
    let n = points.len() as f64;
    let mut centroid = [0.0; 3];
    for p in points.iter() {
        for a in 0..3 {
            centroid[a] += p[a] / n;
        }
    }
    let mut radius: f64 = 0.0;
    for p in points.iter_mut() {
        for a in 0..3 {
            p[a] -= centroid[a];
        }
        radius = radius.max((p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt());
    }
    if radius > 0.0 {
        for p in points.iter_mut() {
            for c in p.iter_mut() {
                *c /= radius;
            }
        }
    }
}

pub fn parse_pointclouds(text: &str, source: &str, normalize: bool) -> Result<Vec<ShapeRecord>> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut out = Vec::new();
    loop {
        let (head_no, header) = loop {
            match lines.next() {
                None => return Ok(out),
                Some((_, l)) if l.trim().is_empty() => continue,
                Some(found) => break found,
            }
        };
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(parse_error(source, head_no, "header must be `id class N`"));
        }
        let class_label: i64 = fields[1]
            .parse()
            .map_err(|_| parse_error(source, head_no, format!("non-integer class `{}`", fields[1])))?;
        let n: usize = fields[2]
            .parse()
            .map_err(|_| parse_error(source, head_no, format!("invalid point count `{}`", fields[2])))?;
        let mut points = Vec::with_capacity(n);
        let mut last = head_no;
        for a in 0..n {
            let (no, line) = lines.next().ok_or_else(|| {
                parse_error(source, last + 1, format!("expected {n} points, found {a}"))
            })?;
            last = no;
            let xyz: Vec<&str> = line.split_whitespace().collect();
            if xyz.len() != 3 {
                return Err(parse_error(source, no, "point line must be `x y z`"));
            }
            points.push([
                parse_coord(source, no, xyz[0])?,
                parse_coord(source, no, xyz[1])?,
                parse_coord(source, no, xyz[2])?,
            ]);
        }
        if normalize {
            normalize_shape(&mut points);
        }
        out.push(ShapeRecord {
            id: fields[0].to_string(),
            points,
            class_label,
        });
    }
}

pub fn read_pointcloud_dataset(path: &Path, normalize: bool) -> Result<Vec<ShapeRecord>> {
    parse_pointclouds(&read_text(path)?, &path.display().to_string(), normalize)
}

pub fn format_pointclouds(records: &[ShapeRecord]) -> Result<String> {
    let mut out = String::new();
    for rec in records {
        check_id(&rec.id)?;
        out.push_str(&format!("{} {} {}\n", rec.id, rec.class_label, rec.points.len()));
        for p in &rec.points {
            out.push_str(&format!("{:.16e} {:.16e} {:.16e}\n", p[0], p[1], p[2]));
        }
    }
    Ok(out)
}

pub fn write_pointcloud_dataset(path: &Path, records: &[ShapeRecord]) -> Result<()> {
    std::fs::write(path, format_pointclouds(records)?)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    pub fractions: [f64; 3],
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded shuffle of `0..n` cut into train, validation and test parts of
/// `round(f · n)` indices each, the test part taking the remainder.
pub fn make_split(n: usize, seed: u64, fractions: [f64; 3]) -> Result<SplitSpec> {
    if fractions.iter().any(|f| !(*f >= 0.0 && f.is_finite())) {
        return Err(Error::Config(format!("split fractions {fractions:?} must be non-negative")));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::Config(format!("split fractions sum to {total}, not 1")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha20Rng::seed_from_u64(seed));
    let n_train = ((fractions[0] * n as f64).round() as usize).min(n);
    let n_val = ((fractions[1] * n as f64).round() as usize).min(n - n_train);
    let test = perm.split_off(n_train + n_val);
    let val = perm.split_off(n_train);
    Ok(SplitSpec {
        seed,
        fractions,
        train: perm,
        val,
        test,
    })
}

pub fn write_feature_matrix<W: Write>(out: W, fm: &FeatureMatrix) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    let mut header = vec!["id".to_string()];
    header.extend(fm.column_meta.iter().map(ColumnMeta::name));
    w.write_record(&header).map_err(csv_err)?;
    for i in 0..fm.n_rows {
        let mut record = vec![fm.row_ids[i].clone()];
        record.extend(fm.row(i).iter().map(|v| format!("{v:.16e}")));
        w.write_record(&record).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn parse_column_name(name: &str) -> Option<ColumnMeta> {
    let rest = name.strip_prefix('f')?;
    let parts: Vec<&str> = rest.split('_').collect();
    match parts.as_slice() {
        [j] => Some(ColumnMeta {
            function: j.parse().ok()?,
            charges: None,
        }),
        [j, a, b] => Some(ColumnMeta {
            function: j.parse().ok()?,
            charges: Some((a.parse().ok()?, b.parse().ok()?)),
        }),
        _ => None,
    }
}

pub fn read_feature_matrix(path: &Path) -> Result<FeatureMatrix> {
    let source = path.display().to_string();
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| parse_error(&source, 1, e.to_string()))?;
    let header = r.headers().map_err(|e| parse_error(&source, 1, e.to_string()))?.clone();
    let column_meta = header
        .iter()
        .skip(1)
        .map(|name| parse_column_name(name).ok_or_else(|| parse_error(&source, 1, format!("bad column `{name}`"))))
        .collect::<Result<Vec<_>>>()?;
    let mut values = Vec::new();
    let mut row_ids = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| parse_error(&source, line, e.to_string()))?;
        if rec.len() != column_meta.len() + 1 {
            return Err(parse_error(&source, line, "wrong number of fields"));
        }
        row_ids.push(rec[0].to_string());
        for field in rec.iter().skip(1) {
            values.push(field.parse::<f64>().map_err(|_| parse_error(&source, line, format!("bad value `{field}`")))?);
        }
    }
    Ok(FeatureMatrix {
        n_rows: row_ids.len(),
        n_cols: column_meta.len(),
        values,
        column_meta,
        row_ids,
        dropped_points: 0,
    })
}

pub const BUNDLE_FORMAT: &str = "rotsig-model";
pub const BUNDLE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Encoding {
    /// One feature per random function on the whole cloud.
    Shape,
    /// Element-pair blocks over a sorted charge vocabulary.
    Element { vocabulary: Vec<i32> },
}

#[derive(Debug, Clone, PartialEq)]
pub enum BundleModel {
    Regression { lambda: f64, target_mean: f64, model: LinearModel },
    Classifier { lambda: f64, classes: Vec<i64>, weights: DMatrix<f64>, intercepts: Vec<f64> },
}

impl BundleModel {
    pub fn from_classifier(c: &ClassifierWeights) -> Self {
        BundleModel::Classifier {
            lambda: c.lambda,
            classes: c.classes.clone(),
            weights: c.weights.clone(),
            intercepts: c.intercepts.iter().copied().collect(),
        }
    }

    pub fn n_inputs(&self) -> usize {
        match self {
            BundleModel::Regression { model, .. } => model.beta.len(),
            BundleModel::Classifier { weights, .. } => weights.ncols(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub config: FeatureConfig,
    pub rng_algorithm: String,
    pub encoding: Encoding,
    pub model: BundleModel,
    pub notes: BTreeMap<String, String>,
    pub random_weights: Vec<f64>,
}

impl ModelBundle {
    pub fn new(rfs: &RandomFunctionSet, encoding: Encoding, model: BundleModel) -> Result<Self> {
        let bundle = ModelBundle {
            config: rfs.config().clone(),
            rng_algorithm: RNG_ALGORITHM.to_string(),
            encoding,
            model,
            notes: BTreeMap::new(),
            random_weights: rfs.weights().to_vec(),
        };
        bundle.check()?;
        Ok(bundle)
    }

    pub fn feature_set(&self) -> Result<RandomFunctionSet> {
        RandomFunctionSet::from_parts(self.config.clone(), self.random_weights.clone())
    }

    pub fn n_columns(&self) -> usize {
        match &self.encoding {
            Encoding::Shape => self.config.n_features,
            Encoding::Element { vocabulary } => self.config.n_features * vocabulary.len() * vocabulary.len(),
        }
    }

    fn check(&self) -> Result<()> {
        self.feature_set()?;
        if self.model.n_inputs() != self.n_columns() {
            return Err(Error::Bundle(format!(
                "model expects {} inputs but the encoding produces {}",
                self.model.n_inputs(),
                self.n_columns()
            )));
        }
        if let BundleModel::Classifier { classes, intercepts, weights, .. } = &self.model {
            if classes.len() != weights.nrows() || intercepts.len() != weights.nrows() {
                return Err(Error::Bundle("classifier shapes disagree".into()));
            }
        }
        Ok(())
    }

    pub fn featurize_molecules(&self, exec: Execution, mols: &[LabeledPointCloud]) -> Result<FeatureMatrix> {
        match &self.encoding {
            Encoding::Element { vocabulary } => {
                element_feature_matrix_with(exec, mols, &self.feature_set()?, vocabulary)
            }
            Encoding::Shape => Err(Error::Config("bundle was trained on shapes, not molecules".into())),
        }
    }

    pub fn featurize_shapes(&self, exec: Execution, shapes: &[Vec<[f64; 3]>]) -> Result<FeatureMatrix> {
        if !matches!(self.encoding, Encoding::Shape) {
            return Err(Error::Config("bundle was trained on molecules, not shapes".into()));
        }
        let clouds = shapes
            .iter()
            .enumerate()
            .map(|(i, p)| PointCloud::new(p.clone(), self.config.normalize_mass).map_err(|e| e.in_sample(i)))
            .collect::<Result<Vec<_>>>()?;
        feature_matrix_with(exec, &clouds, &self.feature_set()?)
    }

    pub fn predict_values(&self, phi: &DMatrix<f64>) -> Result<DVector<f64>> {
        match &self.model {
            BundleModel::Regression { model, .. } => crate::solvers::predict_regression(model, phi),
            BundleModel::Classifier { .. } => Err(Error::Config("bundle holds a classifier".into())),
        }
    }

    pub fn predict_labels(&self, phi: &DMatrix<f64>) -> Result<Vec<i64>> {
        match &self.model {
            BundleModel::Classifier { lambda, classes, weights, intercepts } => {
                let c = ClassifierWeights {
                    classes: classes.clone(),
                    weights: weights.clone(),
                    intercepts: DVector::from_column_slice(intercepts),
                    lambda: *lambda,
                    diagnostics: Vec::new(),
                };
                crate::solvers::predict_classify(&c, phi)
            }
            BundleModel::Regression { .. } => Err(Error::Config("bundle holds a regression model".into())),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
enum ModelHeader {
    Regression { lambda: f64, target_mean: f64, intercept: f64 },
    Classifier { lambda: f64, classes: Vec<i64> },
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: FeatureConfig,
    rng_algorithm: String,
    seed: u64,
    encoding: Encoding,
    model: ModelHeader,
    notes: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct Block {
    shape: Vec<usize>,
    crc32: u32,
    data: String,
}

#[derive(Serialize, Deserialize)]
struct Document {
    format: String,
    version: u32,
    header: Header,
    blocks: BTreeMap<String, Block>,
}

fn encode_block(shape: Vec<usize>, values: &[f64]) -> Block {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    Block {
        shape,
        crc32: crc32fast::hash(&bytes),
        data: base64::engine::general_purpose::STANDARD.encode(&bytes),
    }
}

fn decode_block(blocks: &BTreeMap<String, Block>, name: &str) -> Result<(Vec<usize>, Vec<f64>)> {
    let block = blocks
        .get(name)
        .ok_or_else(|| Error::Bundle(format!("missing block `{name}`")))?;
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(&block.data)
        .map_err(|_| Error::Checksum(name.to_string()))?;
    if crc32fast::hash(&bytes) != block.crc32 || bytes.len() % 8 != 0 {
        return Err(Error::Checksum(name.to_string()));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    if block.shape.iter().product::<usize>() != values.len() {
        return Err(Error::Bundle(format!("block `{name}` shape {:?} does not match its data", block.shape)));
    }
    Ok((block.shape.clone(), values))
}

pub fn bundle_to_json(bundle: &ModelBundle) -> Result<String> {
    bundle.check()?;
    let mut blocks = BTreeMap::new();
    blocks.insert(
        "random_weights".to_string(),
        encode_block(
            vec![bundle.config.n_features, bundle.config.function_len()],
            &bundle.random_weights,
        ),
    );
    let model = match &bundle.model {
        BundleModel::Regression { lambda, target_mean, model } => {
            blocks.insert("beta".into(), encode_block(vec![model.beta.len()], model.beta.as_slice()));
            ModelHeader::Regression {
                lambda: *lambda,
                target_mean: *target_mean,
                intercept: model.intercept,
            }
        }
        BundleModel::Classifier { lambda, classes, weights, intercepts } => {
            let row_major: Vec<f64> = weights.transpose().iter().copied().collect();
            blocks.insert("weights".into(), encode_block(vec![weights.nrows(), weights.ncols()], &row_major));
            blocks.insert("intercepts".into(), encode_block(vec![intercepts.len()], intercepts));
            ModelHeader::Classifier {
                lambda: *lambda,
                classes: classes.clone(),
            }
        }
    };
    let doc = Document {
        format: BUNDLE_FORMAT.to_string(),
        version: BUNDLE_VERSION,
        header: Header {
            config: bundle.config.clone(),
            rng_algorithm: bundle.rng_algorithm.clone(),
            seed: bundle.config.seed,
            encoding: bundle.encoding.clone(),
            model,
            notes: bundle.notes.clone(),
        },
        blocks,
    };
    serde_json::to_string_pretty(&doc).map_err(|e| Error::Bundle(e.to_string()))
}

pub fn bundle_from_json(text: &str) -> Result<ModelBundle> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Bundle(e.to_string()))?;
    if value.get("format").and_then(|f| f.as_str()) != Some(BUNDLE_FORMAT) {
        return Err(Error::Bundle("not a rotsig model bundle".into()));
    }
    let version = value
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Bundle("missing format version".into()))?;
    if version != u64::from(BUNDLE_VERSION) {
        return Err(Error::Version {
            found: u32::try_from(version).unwrap_or(u32::MAX),
            expected: BUNDLE_VERSION,
        });
    }
    let doc: Document = serde_json::from_value(value).map_err(|e| Error::Bundle(e.to_string()))?;
    let (_, random_weights) = decode_block(&doc.blocks, "random_weights")?;
    let model = match doc.header.model {
        ModelHeader::Regression { lambda, target_mean, intercept } => {
            let (_, beta) = decode_block(&doc.blocks, "beta")?;
            BundleModel::Regression {
                lambda,
                target_mean,
                model: LinearModel {
                    beta: DVector::from_vec(beta),
                    intercept,
                },
            }
        }
        ModelHeader::Classifier { lambda, classes } => {
            let (shape, w) = decode_block(&doc.blocks, "weights")?;
            let (_, intercepts) = decode_block(&doc.blocks, "intercepts")?;
            if shape.len() != 2 {
                return Err(Error::Bundle("classifier weights must be two-dimensional".into()));
            }
            BundleModel::Classifier {
                lambda,
                classes,
                weights: DMatrix::from_row_slice(shape[0], shape[1], &w),
                intercepts,
            }
        }
    };
    if doc.header.rng_algorithm != RNG_ALGORITHM {
        log::warn!(
            "bundle was sampled with `{}`; stored weights are used as-is",
            doc.header.rng_algorithm
        );
    }
    let bundle = ModelBundle {
        config: doc.header.config,
        rng_algorithm: doc.header.rng_algorithm,
        encoding: doc.header.encoding,
        model,
        notes: doc.header.notes,
        random_weights,
    };
    bundle.check()?;
    Ok(bundle)
}

pub fn save_bundle(path: &Path, bundle: &ModelBundle) -> Result<()> {
    std::fs::write(path, bundle_to_json(bundle)?)?;
    Ok(())
}

pub fn load_bundle(path: &Path) -> Result<ModelBundle> {
    bundle_from_json(&read_text(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{sample_random_weights, RadialBasis};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn element_table() {
        assert_eq!(element_charge("H"), Some(1));
        assert_eq!(element_charge("C"), Some(6));
        assert_eq!(element_charge("Cl"), Some(17));
        assert_eq!(element_charge("8"), Some(8));
        assert_eq!(element_charge("Xx"), None);
        assert_eq!(element_charge("0"), None);
        for z in 1..=54 {
            assert_eq!(element_charge(element_symbol(z).unwrap()), Some(z));
        }
        assert_eq!(element_symbol(0), None);
    }

    #[test]
    fn xyz_examples() {
        assert!(parse_xyz("", "t").unwrap().is_empty());
        let recs = parse_xyz("1\nenergy=-13.6\nH 0 0 0\n", "t").unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].charges, vec![1]);
        assert_eq!(recs[0].target, Some(-13.6));
        assert_eq!(recs[0].coordinates, vec![[0.0; 3]]);

        let two = "2\nid=a Properties=species:S:1 Energy=1.5\nO 0 0 0\nH 1 0 0 0.3\n\n1\n\nC 0 0 1\n";
        let recs = parse_xyz(two, "t").unwrap();
        assert_eq!(recs[0].id, "a");
        assert_eq!(recs[0].target, Some(1.5));
        assert_eq!(recs[1].id, "1");
        assert_eq!(recs[1].target, None);
        assert_eq!(recs[1].charges, vec![6]);
    }

    fn err_line(r: Result<Vec<MoleculeRecord>>) -> usize {
        match r {
            Err(Error::Parse { line, .. }) => line,
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn xyz_errors_carry_lines() {
        assert_eq!(err_line(parse_xyz("x\n", "t")), 1);
        assert_eq!(err_line(parse_xyz("1\nenergy=1\nQq 0 0 0\n", "t")), 3);
        assert_eq!(err_line(parse_xyz("1\nenergy=1\nH 0 a 0\n", "t")), 3);
        assert_eq!(err_line(parse_xyz("2\nenergy=1\nH 0 0 0\n", "t")), 4);
        assert_eq!(err_line(parse_xyz("1\nenergy=zz\nH 0 0 0\n", "t")), 2);
        assert_eq!(err_line(parse_xyz("1\n", "t")), 2);
    }

    fn random_molecules(rng: &mut ChaCha8Rng, n: usize) -> Vec<MoleculeRecord> {
        (0..n)
            .map(|i| {
                let atoms = rng.random_range(1..8);
                MoleculeRecord {
                    id: format!("m{i}"),
                    charges: (0..atoms).map(|_| rng.random_range(1..=20)).collect(),
                    coordinates: (0..atoms)
                        .map(|_| [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)])
                        .collect(),
                    target: Some(rng.random_range(-100.0..0.0)),
                }
            })
            .collect()
    }

    #[test]
    fn xyz_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let recs = random_molecules(&mut rng, 50);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.xyz");
        write_xyz_dataset(&path, &recs).unwrap();
        let back = read_xyz_dataset(&path).unwrap();
        assert_eq!(back.len(), recs.len());
        for (a, b) in recs.iter().zip(&back) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.charges, b.charges);
            assert!((a.target.unwrap() - b.target.unwrap()).abs() <= 1e-9);
            for (p, q) in a.coordinates.iter().zip(&b.coordinates) {
                for k in 0..3 {
                    assert!((p[k] - q[k]).abs() <= 1e-9);
                }
            }
        }
        let bad = MoleculeRecord { id: "a b".into(), ..recs[0].clone() };
        assert!(format_xyz(&[bad]).is_err());
    }

    #[test]
    fn reference_energies() {
        let table = parse_reference_table("# refs\nH -0.5\n6 -37.8 # carbon\n", "t").unwrap();
        let mut recs = parse_xyz("2\nenergy=-40\nC 0 0 0\nH 1 0 0\n", "t").unwrap();
        apply_reference_energies(&mut recs, &table).unwrap();
        assert!((recs[0].target.unwrap() - (-40.0 + 38.3)).abs() < 1e-12);
        let mut recs = parse_xyz("1\nenergy=-1\nO 0 0 0\n", "t").unwrap();
        assert!(apply_reference_energies(&mut recs, &table).is_err());
        assert!(parse_reference_table("H\n", "t").is_err());
    }

    #[test]
    fn pointcloud_examples() {
        assert!(parse_pointclouds("", "t", false).unwrap().is_empty());
        let recs = parse_pointclouds("s0 3 3\n0 0 0\n1 0 0\n0 2 0\n", "t", false).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].class_label, 3);
        assert_eq!(recs[0].points[2], [0.0, 2.0, 0.0]);
        assert!(matches!(parse_pointclouds("s0 3 2\n0 0 0\n", "t", false), Err(Error::Parse { line: 3, .. })));
        assert!(matches!(parse_pointclouds("s0 x 1\n0 0 0\n", "t", false), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_pointclouds("s0 1 1\n0 0\n", "t", false), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn pointcloud_round_trip_and_normalization() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let recs: Vec<ShapeRecord> = (0..10)
            .map(|i| ShapeRecord {
                id: format!("s{i}"),
                points: (0..rng.random_range(1..30))
                    .map(|_| [rng.random_range(3.0..9.0), rng.random_range(-9.0..0.0), rng.random_range(-1.0..1.0)])
                    .collect(),
                class_label: rng.random_range(0..40),
            })
            .collect();
        let back = parse_pointclouds(&format_pointclouds(&recs).unwrap(), "t", false).unwrap();
        assert_eq!(back, recs);

        let normed = parse_pointclouds(&format_pointclouds(&recs).unwrap(), "t", true).unwrap();
        for rec in &normed {
            let n = rec.points.len() as f64;
            let mut radius: f64 = 0.0;
            for a in 0..3 {
                let mean: f64 = rec.points.iter().map(|p| p[a]).sum::<f64>() / n;
                assert!(mean.abs() < 1e-12);
            }
            for p in &rec.points {
                radius = radius.max((p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt());
            }
            assert!(radius <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn split_examples() {
        let s = make_split(10, 5, [0.8, 0.1, 0.1]).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (8, 1, 1));
        assert_eq!(s, make_split(10, 5, [0.8, 0.1, 0.1]).unwrap());
        assert_ne!(s.train, make_split(10, 6, [0.8, 0.1, 0.1]).unwrap().train);
        assert!(make_split(10, 5, [0.8, 0.1, 0.2]).is_err());
        assert!(make_split(10, 5, [1.1, -0.1, 0.0]).is_err());
    }

    proptest! {
        #[test]
        fn split_partitions(n in 0usize..300, seed in any::<u64>(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let f0 = a;
            let f1 = (1.0 - a) * b;
            let f2 = 1.0 - f0 - f1;
            let s = make_split(n, seed, [f0, f1, f2]).unwrap();
            let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn feature_matrix_csv_round_trip() {
        let fm = FeatureMatrix {
            n_rows: 2,
            n_cols: 2,
            values: vec![0.1, -1.0 / 3.0, 1e-300, 2.5],
            column_meta: vec![
                ColumnMeta { function: 0, charges: Some((1, 6)) },
                ColumnMeta { function: 1, charges: Some((1, 6)) },
            ],
            row_ids: vec!["a".into(), "b".into()],
            dropped_points: 0,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("phi.csv");
        write_feature_matrix(std::fs::File::create(&path).unwrap(), &fm).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("id,f0_1_6,f1_1_6\n"));
        assert_eq!(read_feature_matrix(&path).unwrap(), fm);
    }

    fn small_config(d: usize) -> FeatureConfig {
        FeatureConfig {
            band_limit: 2,
            radial: RadialBasis::qm7(),
            weight_sigma: 1.0,
            n_features: d,
            seed: 9,
            normalize_mass: false,
        }
    }

    fn regression_bundle() -> ModelBundle {
        let rfs = sample_random_weights(&small_config(3)).unwrap();
        let vocab = vec![1, 6];
        let beta = DVector::from_fn(12, |i, _| (i as f64 * 0.37).sin());
        let mut bundle = ModelBundle::new(
            &rfs,
            Encoding::Element { vocabulary: vocab },
            BundleModel::Regression {
                lambda: 1e-3,
                target_mean: -7.0,
                model: LinearModel { beta, intercept: -7.25 },
            },
        )
        .unwrap();
        bundle.notes.insert("self_exclusion".into(), "true".into());
        bundle
    }

    #[test]
    fn bundle_round_trip() {
        let bundle = regression_bundle();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_bundle(&path, &bundle).unwrap();
        assert_eq!(load_bundle(&path).unwrap(), bundle);

        let rfs = sample_random_weights(&small_config(2)).unwrap();
        let w = DMatrix::from_fn(3, 2, |r, c| r as f64 - c as f64 * 0.1);
        let cls = ModelBundle::new(
            &rfs,
            Encoding::Shape,
            BundleModel::Classifier { lambda: 0.5, classes: vec![2, 4, 9], weights: w, intercepts: vec![0.1, 0.2, 0.3] },
        )
        .unwrap();
        assert_eq!(bundle_from_json(&bundle_to_json(&cls).unwrap()).unwrap(), cls);
    }

    #[test]
    fn bundle_version_and_checksum() {
        let text = bundle_to_json(&regression_bundle()).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["version"] = serde_json::json!(2);
        assert!(matches!(
            bundle_from_json(&v.to_string()),
            Err(Error::Version { found: 2, expected: 1 })
        ));

        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let data = v["blocks"]["beta"]["data"].as_str().unwrap().to_string();
        let mut bytes = base64::engine::general_purpose::STANDARD.decode(data).unwrap();
        bytes[3] ^= 1;
        v["blocks"]["beta"]["data"] = serde_json::json!(base64::engine::general_purpose::STANDARD.encode(bytes));
        assert!(matches!(bundle_from_json(&v.to_string()), Err(Error::Checksum(name)) if name == "beta"));
    }

    #[test]
    fn bundle_rejects_inconsistent_shapes() {
        let rfs = sample_random_weights(&small_config(3)).unwrap();
        let bad = ModelBundle::new(
            &rfs,
            Encoding::Shape,
            BundleModel::Regression { lambda: 1.0, target_mean: 0.0, model: LinearModel { beta: DVector::zeros(4), intercept: 0.0 } },
        );
        assert!(matches!(bad, Err(Error::Bundle(_))));
    }

    #[test]
    fn bundle_prediction_parity() {
        let bundle = regression_bundle();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mols: Vec<LabeledPointCloud> = random_molecules(&mut rng, 10)
            .into_iter()
            .map(|mut m| {
                for c in m.charges.iter_mut() {
                    *c = if *c % 2 == 0 { 1 } else { 6 };
                }
                m.to_cloud().unwrap()
            })
            .collect();
        let before = bundle
            .predict_values(&bundle.featurize_molecules(Execution::Sequential, &mols).unwrap().to_dmatrix())
            .unwrap();
        let loaded = bundle_from_json(&bundle_to_json(&bundle).unwrap()).unwrap();
        let after = loaded
            .predict_values(&loaded.featurize_molecules(Execution::Parallel, &mols).unwrap().to_dmatrix())
            .unwrap();
        assert_eq!(before, after);
    }
}
