use std::collections::BTreeSet;
use std::fs::File;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rotsig::dataio::{
    apply_reference_energies, parse_reference_table, read_pointcloud_dataset, read_xyz_dataset,
    save_bundle, load_bundle, make_split, write_feature_matrix, BundleModel, Encoding,
    ModelBundle, MoleculeRecord, ShapeRecord,
};
use rotsig::exec::Execution;
use rotsig::features::{
    element_feature_matrix_with, feature_matrix_with, sample_random_weights, FeatureConfig,
    FeatureMatrix, Gaussian, LabeledPointCloud, PointCloud, RadialBasis, RNG_ALGORITHM,
};
use rotsig::solvers::{default_lambda_grid, LsqrOptions};
use rotsig::timing::{quadratic_fit, summarize, synthetic_cloud, time_it};
use rotsig::train::{fit_classifier, fit_regression, mae, accuracy, select_rows, LambdaScore, RegressionSolver};
use rotsig::validate::{self, Faults, Level};
use serde_json::json;

use crate::{
    Axis, BenchmarkArgs, Cli, Command, DataArgs, FeatureArgs, FeaturizeArgs, FitArgs, Format,
    LevelArg, PredictArgs, RadialPreset, SolverArg, SweepArgs, TrainArgs, ValidateArgs,
};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] rotsig::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Core(rotsig::Error::Config(_)) => 2,
            _ => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        use rotsig::Error as E;
        match self {
            CliError::Usage(_) => "usage",
            CliError::Io(_) | CliError::Csv(_) => "io",
            CliError::Core(e) => match e {
                E::Config(_) => "config",
                E::Domain(_) | E::ZeroNormPoint { .. } | E::NonFinite { .. } => "domain",
                E::ShapeMismatch { .. } => "shape",
                E::ImaginaryResidue { .. } => "numerics",
                E::UnknownCharge(_) => "vocabulary",
                E::Sample { .. } => "sample",
                E::Solver(_) | E::DegenerateLabels(_) => "solver",
                E::Parse { .. } => "parse",
                E::Version { .. } => "version",
                E::Checksum(_) | E::Bundle(_) => "bundle",
                E::Io(_) => "io",
            },
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

pub fn run(cli: Cli) -> Result<u8> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| usage(format!("cannot configure thread pool: {e}")))?;
    }
    match cli.command {
        Command::Featurize(a) => featurize(a),
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Benchmark(a) => benchmark(a),
        Command::Sweep(a) => sweep(a),
        Command::Validate(a) => validate(a),
    }
}

fn threads() -> usize {
    rayon::current_num_threads()
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(|t| t.trim().parse::<T>().map_err(|_| usage(format!("invalid {what} `{}`", t.trim()))))
        .collect()
}

fn parse_radial(spec: &str) -> Result<RadialBasis> {
    let mut gaussians = Vec::new();
    for pair in spec.split(',') {
        let (c, w) = pair
            .split_once(':')
            .ok_or_else(|| usage(format!("radial function `{pair}` must be `center:width`")))?;
        let center = c.trim().parse().map_err(|_| usage(format!("invalid radial center `{c}`")))?;
        let width = w.trim().parse().map_err(|_| usage(format!("invalid radial width `{w}`")))?;
        gaussians.push(Gaussian { center, width });
    }
    Ok(RadialBasis::new(gaussians)?)
}

fn feature_config(f: &FeatureArgs) -> Result<FeatureConfig> {
    let radial = match &f.radial_spec {
        Some(spec) => parse_radial(spec)?,
        None => match f.radial_preset {
            RadialPreset::Qm7 => RadialBasis::qm7(),
            RadialPreset::Modelnet => RadialBasis::modelnet(),
        },
    };
    let config = FeatureConfig {
        band_limit: f.band_limit,
        radial: radial.scaled(f.radial_scale)?,
        weight_sigma: f.sigma,
        n_features: f.n_features,
        seed: f.seed,
        normalize_mass: f.normalize_mass,
    };
    config.validate()?;
    Ok(config)
}

enum Dataset {
    Molecules(Vec<MoleculeRecord>),
    Shapes(Vec<ShapeRecord>),
}

impl Dataset {
    fn len(&self) -> usize {
        match self {
            Dataset::Molecules(m) => m.len(),
            Dataset::Shapes(s) => s.len(),
        }
    }

    fn ids(&self) -> Vec<String> {
        match self {
            Dataset::Molecules(m) => m.iter().map(|r| r.id.clone()).collect(),
            Dataset::Shapes(s) => s.iter().map(|r| r.id.clone()).collect(),
        }
    }

    fn sizes(&self) -> Vec<usize> {
        match self {
            Dataset::Molecules(m) => m.iter().map(|r| r.charges.len()).collect(),
            Dataset::Shapes(s) => s.iter().map(|r| r.points.len()).collect(),
        }
    }

    fn vocabulary(&self, explicit: Option<&str>) -> Result<Vec<i32>> {
        let mut vocab: Vec<i32> = match (explicit, self) {
            (Some(text), _) => parse_list(text, "charge")?,
            (None, Dataset::Molecules(m)) => m
                .iter()
                .flat_map(|r| r.charges.iter().copied())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect(),
            (None, Dataset::Shapes(_)) => Vec::new(),
        };
        vocab.sort_unstable();
        vocab.dedup();
        Ok(vocab)
    }

    fn encoding(&self, vocab: Vec<i32>) -> Encoding {
        match self {
            Dataset::Molecules(_) => Encoding::Element { vocabulary: vocab },
            Dataset::Shapes(_) => Encoding::Shape,
        }
    }
}

fn load_dataset(path: &Path, format: Format, unit_ball: bool, references: Option<&PathBuf>) -> Result<Dataset> {
    match format {
        Format::Xyz => {
            let mut records = read_xyz_dataset(path)?;
            if let Some(table) = references {
                let text = std::fs::read_to_string(table)?;
                apply_reference_energies(&mut records, &parse_reference_table(&text, &table.display().to_string())?)?;
            }
            Ok(Dataset::Molecules(records))
        }
        Format::Pointcloud => {
            if references.is_some() {
                return Err(usage("--reference-energies applies to molecular datasets only"));
            }
            Ok(Dataset::Shapes(read_pointcloud_dataset(path, unit_ball)?))
        }
    }
}

fn load(data: &DataArgs) -> Result<Dataset> {
    load_dataset(&data.dataset, data.format, data.unit_ball, data.reference_energies.as_ref())
}

fn molecule_clouds(records: &[MoleculeRecord]) -> Result<Vec<LabeledPointCloud>> {
    records
        .iter()
        .enumerate()
        .map(|(row, r)| {
            r.to_cloud().map_err(|e| rotsig::Error::Sample { row, source: Box::new(e) }.into())
        })
        .collect()
}

fn shape_clouds(records: &[ShapeRecord], normalize_mass: bool) -> Result<Vec<PointCloud>> {
    records
        .iter()
        .enumerate()
        .map(|(row, r)| {
            PointCloud::new(r.points.clone(), normalize_mass)
                .map_err(|e| rotsig::Error::Sample { row, source: Box::new(e) }.into())
        })
        .collect()
}

fn compute_features(ds: &Dataset, config: &FeatureConfig, vocab: &[i32]) -> Result<FeatureMatrix> {
    let rfs = sample_random_weights(config)?;
    let exec = Execution::default();
    let fm = match ds {
        Dataset::Molecules(m) => element_feature_matrix_with(exec, &molecule_clouds(m)?, &rfs, vocab)?,
        Dataset::Shapes(s) => feature_matrix_with(exec, &shape_clouds(s, config.normalize_mass)?, &rfs)?,
    };
    Ok(fm.with_row_ids(ds.ids())?)
}

fn featurize(a: FeaturizeArgs) -> Result<u8> {
    let config = feature_config(&a.features)?;
    let ds = load(&a.data)?;
    let vocab = ds.vocabulary(a.features.vocab.as_deref())?;
    let fm = compute_features(&ds, &config, &vocab)?;
    write_feature_matrix(File::create(&a.out)?, &fm)?;
    let meta = json!({
        "config": config,
        "rng_algorithm": RNG_ALGORITHM,
        "encoding": ds.encoding(vocab),
        "n_rows": fm.n_rows,
        "n_cols": fm.n_cols,
        "dropped_points": fm.dropped_points,
        "threads": threads(),
    });
    std::fs::write(sidecar(&a.out, "json"), serde_json::to_string_pretty(&meta).expect("plain JSON"))?;
    println!("{}", json!({ "rows": fm.n_rows, "cols": fm.n_cols, "out": a.out }));
    Ok(0)
}

fn sidecar(path: &Path, ext: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

struct TrainOutcome {
    bundle: ModelBundle,
    scores: Vec<LambdaScore>,
    lambda: f64,
    metric: &'static str,
    test_metric: f64,
    solver: &'static str,
    split_sizes: (usize, usize, usize),
    /// (id, split, prediction, target)
    predictions: Vec<(String, &'static str, String, String)>,
}

fn regression_solver(fit: &FitArgs) -> Result<RegressionSolver> {
    Ok(match fit.solver {
        SolverArg::Svd => RegressionSolver::Svd,
        SolverArg::Lsqr => RegressionSolver::Lsqr(LsqrOptions {
            tol: fit.lsqr_tol,
            max_iter: fit.max_iter,
        }),
        SolverArg::Pcr => RegressionSolver::Pcr {
            rank: fit.pcr_rank.ok_or_else(|| usage("--solver pcr needs --pcr-rank"))?,
        },
    })
}

fn lambda_grid(fit: &FitArgs) -> Result<Vec<f64>> {
    match &fit.lambda_grid {
        Some(text) => parse_list(text, "regularization value"),
        None => Ok(default_lambda_grid()),
    }
}

fn split_fractions(fit: &FitArgs) -> Result<[f64; 3]> {
    let f: Vec<f64> = parse_list(&fit.split, "split fraction")?;
    <[f64; 3]>::try_from(f).map_err(|_| usage("--split needs three fractions"))
}

fn train_once(ds: &Dataset, config: &FeatureConfig, vocab: &[i32], fit: &FitArgs, split_seed: u64) -> Result<TrainOutcome> {
    let lambdas = lambda_grid(fit)?;
    let fractions = split_fractions(fit)?;
    let fm = compute_features(ds, config, vocab)?;
    let phi = fm.to_dmatrix();
    let split = make_split(ds.len(), split_seed, fractions)?;
    if split.train.is_empty() {
        return Err(usage("the training split is empty"));
    }
    let ids = ds.ids();
    let rfs = sample_random_weights(config)?;
    let (xt, xv, xs) = (select_rows(&phi, &split.train), select_rows(&phi, &split.val), select_rows(&phi, &split.test));
    let mut predictions = Vec::new();

    let (bundle, scores, lambda, metric, test_metric, solver) = match ds {
        Dataset::Molecules(records) => {
            let targets: Vec<f64> = records
                .iter()
                .enumerate()
                .map(|(row, r)| {
                    r.target.ok_or_else(|| {
                        rotsig::Error::Sample {
                            row,
                            source: Box::new(rotsig::Error::Domain("molecule has no energy".into())),
                        }
                        .into()
                    })
                })
                .collect::<Result<_>>()?;
            let pick = |idx: &[usize]| DVector::from_iterator(idx.len(), idx.iter().map(|&i| targets[i]));
            let solver = regression_solver(fit)?;
            let result = fit_regression(&xt, &pick(&split.train), &xv, &pick(&split.val), solver, &lambdas)?;
            let mut test_metric = f64::NAN;
            for (name, idx, x) in [("val", &split.val, &xv), ("test", &split.test, &xs)] {
                if idx.is_empty() {
                    continue;
                }
                let pred = rotsig::solvers::predict_regression(&result.model, x)?;
                if name == "test" {
                    test_metric = mae(&pred, &pick(idx));
                }
                for (p, &i) in pred.iter().zip(idx.iter()) {
                    predictions.push((ids[i].clone(), name, format!("{p}"), format!("{}", targets[i])));
                }
            }
            let mut bundle = ModelBundle::new(
                &rfs,
                Encoding::Element { vocabulary: vocab.to_vec() },
                BundleModel::Regression {
                    lambda: result.lambda,
                    target_mean: result.target_mean,
                    model: result.model,
                },
            )?;
            bundle.notes.insert("self_exclusion".into(), "true".into());
            bundle.notes.insert("targets".into(), "centered, unpenalized intercept".into());
            let name = match fit.solver {
                SolverArg::Svd => "svd",
                SolverArg::Lsqr => "lsqr",
                SolverArg::Pcr => "pcr",
            };
            (bundle, result.scores, result.lambda, "mae", test_metric, name)
        }
        Dataset::Shapes(records) => {
            let labels: Vec<i64> = records.iter().map(|r| r.class_label).collect();
            let pick = |idx: &[usize]| idx.iter().map(|&i| labels[i]).collect::<Vec<_>>();
            let result = fit_classifier(
                Execution::default(),
                &xt,
                &pick(&split.train),
                &xv,
                &pick(&split.val),
                &lambdas,
                fit.max_iter,
                fit.logistic_tol,
            )?;
            let bundle_model = BundleModel::from_classifier(&result.weights);
            let bundle = ModelBundle::new(&rfs, Encoding::Shape, bundle_model)?;
            let mut test_metric = f64::NAN;
            for (name, idx, x) in [("val", &split.val, &xv), ("test", &split.test, &xs)] {
                if idx.is_empty() {
                    continue;
                }
                let pred = bundle.predict_labels(x)?;
                if name == "test" {
                    test_metric = accuracy(&pred, &pick(idx));
                }
                for (p, &i) in pred.iter().zip(idx.iter()) {
                    predictions.push((ids[i].clone(), name, p.to_string(), labels[i].to_string()));
                }
            }
            (bundle, result.scores, result.lambda, "accuracy", test_metric, "logistic")
        }
    };
    let mut bundle = bundle;
    bundle.notes.insert("split_seed".into(), split_seed.to_string());
    bundle.notes.insert("split".into(), format!("{fractions:?}"));
    Ok(TrainOutcome {
        bundle,
        scores,
        lambda,
        metric,
        test_metric,
        solver,
        split_sizes: (split.train.len(), split.val.len(), split.test.len()),
        predictions,
    })
}

fn train(a: TrainArgs) -> Result<u8> {
    let config = feature_config(&a.features)?;
    let ds = load(&a.data)?;
    let vocab = ds.vocabulary(a.features.vocab.as_deref())?;
    let split_seed = a.fit.split_seed.unwrap_or(config.seed);
    let out = train_once(&ds, &config, &vocab, &a.fit, split_seed)?;
    save_bundle(&a.out, &out.bundle)?;

    let report = a.report.clone().unwrap_or_else(|| sidecar(&a.out, "report.csv"));
    let mut w = csv::Writer::from_path(&report)?;
    w.write_record(["lambda", "metric", "train_metric", "val_metric", "converged", "selected", "solver", "threads"])?;
    for s in &out.scores {
        w.write_record([
            s.lambda.to_string(),
            out.metric.to_string(),
            s.train_metric.to_string(),
            s.val_metric.to_string(),
            s.converged.to_string(),
            (s.lambda == out.lambda).to_string(),
            out.solver.to_string(),
            threads().to_string(),
        ])?;
    }
    w.flush()?;

    if let Some(path) = &a.predictions {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["id", "split", "prediction", "target"])?;
        for (id, split, p, t) in &out.predictions {
            w.write_record([id.as_str(), split, p, t])?;
        }
        w.flush()?;
    }
    let selected = out.scores.iter().find(|s| s.lambda == out.lambda).expect("selected λ is on the grid");
    println!(
        "{}",
        json!({
            "metric": out.metric,
            "solver": out.solver,
            "lambda": out.lambda,
            "train_metric": selected.train_metric,
            "val_metric": nan_as_null(selected.val_metric),
            "test_metric": nan_as_null(out.test_metric),
            "split": [out.split_sizes.0, out.split_sizes.1, out.split_sizes.2],
            "threads": threads(),
            "bundle": a.out,
            "report": report,
        })
    );
    Ok(0)
}

fn nan_as_null(v: f64) -> serde_json::Value {
    if v.is_finite() {
        json!(v)
    } else {
        serde_json::Value::Null
    }
}

fn bundle_features(bundle: &ModelBundle, ds: &Dataset) -> Result<FeatureMatrix> {
    let exec = Execution::default();
    Ok(match ds {
        Dataset::Molecules(m) => bundle.featurize_molecules(exec, &molecule_clouds(m)?)?,
        Dataset::Shapes(s) => {
            bundle.featurize_shapes(exec, &s.iter().map(|r| r.points.clone()).collect::<Vec<_>>())?
        }
    })
}

fn predict(a: PredictArgs) -> Result<u8> {
    let bundle = load_bundle(&a.bundle)?;
    let ds = load(&a.data)?;
    let phi = bundle_features(&bundle, &ds)?.to_dmatrix();
    let ids = ds.ids();
    let mut w = csv::Writer::from_path(&a.out)?;
    let summary = match (&ds, &bundle.model) {
        (Dataset::Molecules(records), BundleModel::Regression { .. }) => {
            let pred = bundle.predict_values(&phi)?;
            let has_targets = records.iter().all(|r| r.target.is_some());
            w.write_record(["id", "prediction", "target", "abs_error"])?;
            for (i, p) in pred.iter().enumerate() {
                let (t, e) = match records[i].target {
                    Some(t) => (t.to_string(), (p - t).abs().to_string()),
                    None => (String::new(), String::new()),
                };
                w.write_record([ids[i].clone(), p.to_string(), t, e])?;
            }
            let value = if has_targets && !records.is_empty() {
                let y = DVector::from_iterator(records.len(), records.iter().map(|r| r.target.unwrap()));
                json!(mae(&pred, &y))
            } else {
                serde_json::Value::Null
            };
            json!({ "n": records.len(), "metric": "mae", "value": value })
        }
        (Dataset::Shapes(records), BundleModel::Classifier { .. }) => {
            let pred = bundle.predict_labels(&phi)?;
            w.write_record(["id", "prediction", "target", "correct"])?;
            for (i, p) in pred.iter().enumerate() {
                let t = records[i].class_label;
                w.write_record([ids[i].clone(), p.to_string(), t.to_string(), (*p == t).to_string()])?;
            }
            let labels: Vec<i64> = records.iter().map(|r| r.class_label).collect();
            json!({ "n": records.len(), "metric": "accuracy", "value": nan_as_null(accuracy(&pred, &labels)) })
        }
        _ => return Err(usage("dataset format does not match the bundle's task")),
    };
    w.flush()?;
    println!("{summary}");
    Ok(0)
}

fn benchmark(a: BenchmarkArgs) -> Result<u8> {
    if a.reps == 0 {
        return Err(usage("--reps must be at least 1"));
    }
    // (sample id, N, rep, seconds)
    let mut rows: Vec<(String, usize, usize, f64)> = Vec::new();
    if let Some(sizes) = &a.synthetic {
        let sizes: Vec<usize> = parse_list(sizes, "size")?;
        let config = feature_config(&a.features)?;
        let rfs = sample_random_weights(&config)?;
        for &n in &sizes {
            let cloud = PointCloud::new(synthetic_cloud(n, 3.0, config.seed.wrapping_add(n as u64)), config.normalize_mass)?;
            let batch = [cloud];
            for rep in 0..a.reps {
                let (fm, secs) = time_it(|| feature_matrix_with(Execution::Sequential, &batch, &rfs));
                fm?;
                rows.push((format!("synthetic_{n}"), n, rep, secs));
            }
        }
    } else {
        let bundle_path = a.bundle.as_ref().expect("clap enforces --bundle");
        let dataset = a.dataset.as_ref().ok_or_else(|| usage("--bundle needs --dataset"))?;
        let bundle = load_bundle(bundle_path)?;
        let ds = load_dataset(dataset, a.format, false, None)?;
        let ids = ds.ids();
        let sizes = ds.sizes();
        for i in 0..ds.len() {
            let one = match &ds {
                Dataset::Molecules(m) => Dataset::Molecules(vec![m[i].clone()]),
                Dataset::Shapes(s) => Dataset::Shapes(vec![s[i].clone()]),
            };
            for rep in 0..a.reps {
                let (res, secs) = time_it(|| -> Result<()> {
                    let phi = bundle_features(&bundle, &one)?.to_dmatrix();
                    match bundle.model {
                        BundleModel::Regression { .. } => {
                            bundle.predict_values(&phi)?;
                        }
                        BundleModel::Classifier { .. } => {
                            bundle.predict_labels(&phi)?;
                        }
                    }
                    Ok(())
                });
                res?;
                rows.push((ids[i].clone(), sizes[i], rep, secs));
            }
        }
    }

    let mut w = csv::Writer::from_path(&a.out)?;
    w.write_record(["sample_id", "N", "rep", "seconds", "threads"])?;
    for (id, n, rep, secs) in &rows {
        w.write_record([id.clone(), n.to_string(), rep.to_string(), secs.to_string(), threads().to_string()])?;
    }
    w.flush()?;

    let distinct: BTreeSet<usize> = rows.iter().map(|r| r.1).collect();
    let mut groups = Vec::new();
    let (mut ns, mut medians) = (Vec::new(), Vec::new());
    for n in distinct {
        let times: Vec<f64> = rows.iter().filter(|r| r.1 == n).map(|r| r.3).collect();
        let s = summarize(&times);
        ns.push(n as f64);
        medians.push(s.median);
        groups.push(json!({ "n": n, "count": s.count, "median": s.median, "p25": s.p25, "p75": s.p75 }));
    }
    let fit = quadratic_fit(&ns, &medians)
        .map(|f| json!({ "a": f.a, "b": f.b, "r_squared": f.r_squared }))
        .unwrap_or(serde_json::Value::Null);
    println!("{}", json!({ "threads": threads(), "groups": groups, "quadratic_fit": fit }));
    Ok(0)
}

fn sweep(a: SweepArgs) -> Result<u8> {
    let base = feature_config(&a.features)?;
    let ds = load(&a.data)?;
    let vocab = ds.vocabulary(a.features.vocab.as_deref())?;
    let values: Vec<f64> = parse_list(&a.values, "sweep value")?;
    let split_seed = a.fit.split_seed.unwrap_or(base.seed);
    let axis = match a.axis {
        Axis::L => "L",
        Axis::Sigma => "sigma",
        Axis::RadialScale => "radial_scale",
        Axis::NFeatures => "n_features",
    };
    let mut w = csv::Writer::from_path(&a.out)?;
    w.write_record([
        "index", "axis", "value", "seed", "metric", "lambda", "train_metric", "val_metric", "test_metric", "status",
    ])?;
    let mut failures = 0;
    for (i, &value) in values.iter().enumerate() {
        let seed = base.seed.wrapping_add(i as u64);
        let point = (|| -> Result<TrainOutcome> {
            let mut config = base.clone();
            config.seed = seed;
            let as_count = || -> Result<usize> {
                if value >= 0.0 && value.fract() == 0.0 {
                    Ok(value as usize)
                } else {
                    Err(usage(format!("{axis} needs a non-negative integer, got {value}")))
                }
            };
            match a.axis {
                Axis::L => config.band_limit = as_count()?,
                Axis::Sigma => config.weight_sigma = value,
                Axis::RadialScale => config.radial = base.radial.scaled(value)?,
                Axis::NFeatures => config.n_features = as_count()?,
            }
            config.validate()?;
            train_once(&ds, &config, &vocab, &a.fit, split_seed)
        })();
        let mut record = vec![i.to_string(), axis.to_string(), value.to_string(), seed.to_string()];
        match point {
            Ok(out) => {
                let s = out.scores.iter().find(|s| s.lambda == out.lambda).expect("selected λ is on the grid");
                record.extend([
                    out.metric.to_string(),
                    out.lambda.to_string(),
                    s.train_metric.to_string(),
                    s.val_metric.to_string(),
                    out.test_metric.to_string(),
                    "ok".to_string(),
                ]);
            }
            Err(e) => {
                failures += 1;
                log::warn!("sweep point {i} ({axis} = {value}) failed: {e}");
                record.extend([String::new(), String::new(), String::new(), String::new(), String::new()]);
                record.push(format!("error: {e}"));
            }
        }
        w.write_record(&record)?;
    }
    w.flush()?;
    println!("{}", json!({ "points": values.len(), "failed": failures, "threads": threads(), "out": a.out }));
    Ok(0)
}

fn validate(a: ValidateArgs) -> Result<u8> {
    let level = match a.level {
        LevelArg::Fast => Level::Fast,
        LevelArg::Full => Level::Full,
    };
    let faults = Faults {
        flip_wigner_sign: a.inject_fault,
    };
    let report = validate::run(level, Execution::default(), faults);
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(["check", "measured", "threshold", "passed", "detail"])?;
        for c in &report.checks {
            w.write_record([
                c.name.to_string(),
                format!("{:e}", c.measured),
                format!("{:e}", c.threshold),
                c.passed.to_string(),
                c.detail.clone(),
            ])?;
        }
        w.flush()?;
    }
    print!("{}", String::from_utf8_lossy(&buf));
    if let Some(path) = &a.out {
        std::fs::write(path, &buf)?;
    }
    Ok(if report.passed() { 0 } else { 1 })
}
