//! Pipeline stages and the commands built from them. Every command writes
//! into a fresh run directory that also holds the resolved config.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::Utc;
use edgescope::data::{load_manifest, patient_split, synth_dataset, write_manifest, ClassMap, DataError, Sample, SplitSpec};
use edgescope::ensemble::{
    extract_features, random_search, write_feature_csv, EnsembleModel, FeatureRow, FeatureVector, Scorer, SearchOutcome, SearchSpace,
};
use edgescope::metrics::{youden_threshold, MetricsReport, TABLE_COLUMNS};
use edgescope::nets::{checkpoint, EncoderPreset, Learner, ModelBundle, NetError, Network};
use edgescope::seed;
use edgescope::tensor::{Element, Precision};
use edgescope::train::{self, TrainReport};
use serde::{Deserialize, Serialize};

use crate::config::{AeFilter, DataConfig, RunConfig};
use crate::error::{CliError, Result};

pub const RESOLVED_CONFIG: &str = "resolved_config.json";
pub const SPLIT: &str = "split.json";
pub const FEATURES: &str = "features.csv";
pub const TEST_FEATURES: &str = "test_features.csv";
pub const TUNING_LOG: &str = "tuning_log.csv";
pub const METRICS: &str = "metrics.json";
pub const PER_CLASS: &str = "per_class.csv";
pub const SCATTER: &str = "scatter.csv";

pub fn checkpoint_name(learner: Learner) -> String {
    format!("{learner}.ckpt.json")
}

pub fn report_name(learner: Learner) -> String {
    format!("train_report_{learner}.json")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnsembleKind {
    Rf,
    Svm,
}

impl EnsembleKind {
    pub const ALL: [EnsembleKind; 2] = [EnsembleKind::Rf, EnsembleKind::Svm];

    pub fn as_str(self) -> &'static str {
        match self {
            EnsembleKind::Rf => "rf",
            EnsembleKind::Svm => "svm",
        }
    }

    pub fn model_file(self) -> String {
        format!("{}_model.json", self.as_str())
    }
}

/// Creates `<out>/<UTC timestamp>-seed<seed>`, adding a counter on collision.
pub fn create_run_dir(out: &Path, seed: u64) -> Result<PathBuf> {
    fs::create_dir_all(out).map_err(CliError::output(out))?;
    let stem = format!("{}-seed{seed}", Utc::now().format("%Y%m%dT%H%M%SZ"));
    let mut dir = out.join(&stem);
    let mut k = 1;
    while dir.exists() {
        dir = out.join(format!("{stem}-{k}"));
        k += 1;
    }
    fs::create_dir(&dir).map_err(CliError::output(&dir))?;
    Ok(dir)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(CliError::output(path))
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    write_text(path, &serde_json::to_string_pretty(value).expect("serialisable output"))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(CliError::output(path))?;
    Ok(csv::Writer::from_writer(file))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::Output { path: path.to_path_buf(), source: e.into() }
}

fn begin_run(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = create_run_dir(&cfg.out, cfg.seed)?;
    write_text(&dir.join(RESOLVED_CONFIG), &cfg.to_json())?;
    Ok(dir)
}

// ---------------------------------------------------------------- data

/// Labeled and unlabeled samples routed by a patient-wise split.
#[derive(Debug, Clone)]
pub struct Datasets {
    pub split: SplitSpec,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    /// Labeled test samples only.
    pub test: Vec<Sample>,
}

pub fn load_datasets(cfg: &RunConfig) -> Result<Datasets> {
    let (pool, test) = match &cfg.data {
        DataConfig::Synth { normal, anomaly, test_normal, test_anomaly, size } => (
            synth_dataset(*normal, *anomaly, *size, seed::derive(cfg.seed, "data.synth", 0)),
            synth_dataset(*test_normal, *test_anomaly, *size, seed::derive(cfg.seed, "data.synth", 1)),
        ),
        DataConfig::Manifest { train, test, class_map, height, width } => {
            let map = ClassMap::preset(class_map)?;
            let size = Some((*height, *width));
            (load_manifest(train, &map, size)?.samples, load_manifest(test, &map, size)?.samples)
        }
    };
    let test: Vec<Sample> = test.into_iter().filter(|s| s.label.is_labeled()).collect();
    let patients: Vec<&str> = pool.iter().map(|s| s.patient_id.as_str()).collect();
    let reserved: Vec<&str> = test.iter().map(|s| s.patient_id.as_str()).collect();
    let split = patient_split(&patients, &reserved, cfg.train_ratio, seed::derive(cfg.seed, "data.split", 0))?;
    // Pool rows of test patients are dropped so no patient spans two sets.
    let [train, val, _, _] = split.apply(pool);
    Ok(Datasets { split, train, val, test })
}

/// Per-learner training rows; the autoencoder's follow `filter`.
fn training_rows(learner: Learner, filter: AeFilter, train: &[Sample]) -> Vec<Sample> {
    match (learner, filter) {
        (Learner::Autoencoder, AeFilter::NormalOnly) => train.iter().filter(|s| s.label != edgescope::data::Label::Anomaly).cloned().collect(),
        _ => train.to_vec(),
    }
}

// ---------------------------------------------------------------- training

fn train_learner<T: Element>(cfg: &RunConfig, learner: Learner, data: &Datasets, dir: &Path) -> Result<(Network<T>, TrainReport)> {
    let preset = EncoderPreset::by_name(&cfg.preset)?;
    let mut net = Network::<T>::new(learner, preset, cfg.data.input_shape(), cfg.seed)?;
    let rows = training_rows(learner, cfg.ae_filter, &data.train);
    let mut report = train::train(&mut net, &rows, &data.val, cfg.train.get(learner))?;
    let path = dir.join(checkpoint_name(learner));
    checkpoint::save(&net, &path).map_err(|e| match e {
        NetError::Io(source) => CliError::Output { path: path.clone(), source },
        other => other.into(),
    })?;
    report.checkpoint = Some(path);
    write_json(&dir.join(report_name(learner)), &report)?;
    Ok((net, report))
}

fn load_checkpoint<T: Element>(path: &Path, learner: Learner) -> Result<Network<T>> {
    let err = |detail: String| CliError::Checkpoint { path: path.to_path_buf(), detail };
    if !path.is_file() {
        return Err(err("file not found".into()));
    }
    let net = checkpoint::load::<T>(path).map_err(|e| err(e.to_string()))?;
    if net.learner != learner {
        return Err(err(format!("holds a {} network, expected {learner}", net.learner)));
    }
    Ok(net)
}

/// Paths to the three base-learner checkpoints.
#[derive(Debug, Clone)]
pub struct BundlePaths {
    pub clf: PathBuf,
    pub ae: PathBuf,
    pub semi: PathBuf,
}

impl BundlePaths {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            clf: dir.join(checkpoint_name(Learner::Classifier)),
            ae: dir.join(checkpoint_name(Learner::Autoencoder)),
            semi: dir.join(checkpoint_name(Learner::Semi)),
        }
    }

    fn precision(&self) -> Result<Precision> {
        for p in [&self.clf, &self.ae, &self.semi] {
            if !p.is_file() {
                return Err(CliError::Checkpoint { path: p.clone(), detail: "file not found".into() });
            }
        }
        let header = checkpoint::peek(&self.clf).map_err(|e| CliError::Checkpoint { path: self.clf.clone(), detail: e.to_string() })?;
        Ok(header.precision)
    }

    fn load<T: Element>(&self) -> Result<ModelBundle<T>> {
        Ok(ModelBundle::from_parts(
            load_checkpoint(&self.clf, Learner::Classifier)?,
            load_checkpoint(&self.ae, Learner::Autoencoder)?,
            load_checkpoint(&self.semi, Learner::Semi)?,
        )?)
    }
}

// ---------------------------------------------------------------- ensemble

fn labeled<'a>(samples: impl IntoIterator<Item = &'a Sample>) -> Vec<&'a Sample> {
    samples.into_iter().filter(|s| s.label.is_labeled()).collect()
}

fn feature_rows<T: Element>(bundle: &ModelBundle<T>, samples: &[(&str, &Sample)]) -> Result<Vec<FeatureRow>> {
    let images: Vec<_> = samples.iter().map(|(_, s)| &s.image).collect();
    let features = extract_features(bundle, &images)?;
    Ok(samples
        .iter()
        .zip(features)
        .enumerate()
        .map(|(i, ((prefix, s), f))| FeatureRow::new(format!("{prefix}-{i:05}"), f, s.label.binary().expect("labeled sample")))
        .collect())
}

/// Features of every labeled train and val sample, the ensemble's fit set.
fn fit_rows<T: Element>(bundle: &ModelBundle<T>, data: &Datasets) -> Result<Vec<FeatureRow>> {
    let tagged: Vec<(&str, &Sample)> =
        labeled(&data.train).into_iter().map(|s| ("train", s)).chain(labeled(&data.val).into_iter().map(|s| ("val", s))).collect();
    feature_rows(bundle, &tagged)
}

fn table(rows: &[FeatureRow]) -> (Vec<Vec<f64>>, Vec<u8>) {
    (rows.iter().map(|r| r.features().to_vec()).collect(), rows.iter().map(|r| r.label).collect())
}

#[derive(Debug, Clone, Serialize)]
struct TuningRow {
    kind: &'static str,
    draw: usize,
    auc: f64,
    selected: bool,
    hyper: String,
}

fn search<S: SearchSpace>(space: &S, rows: &[FeatureRow], draws: usize, seed: u64) -> Result<SearchOutcome<S::Hyper, S::Model>> {
    let (x, y) = table(rows);
    Ok(random_search(space, &x, &y, draws, seed)?)
}

fn fit_ensemble(cfg: &RunConfig, kind: EnsembleKind, rows: &[FeatureRow]) -> Result<(EnsembleModel, Vec<TuningRow>)> {
    let seed = seed::derive(cfg.seed, "ensemble", kind as u64);
    let draws = cfg.ensemble.draws;
    let log = |best: usize, entries: Vec<(usize, f64, String)>| {
        entries
            .into_iter()
            .map(|(draw, auc, hyper)| TuningRow { kind: kind.as_str(), draw, auc, selected: draw == best, hyper })
            .collect::<Vec<_>>()
    };
    Ok(match kind {
        EnsembleKind::Rf => {
            let out = search(&cfg.ensemble.forest, rows, draws, seed)?;
            let entries = out.log.iter().map(|d| (d.index, d.auc, serde_json::to_string(&d.hyper).expect("serialisable hyperparameters"))).collect();
            (EnsembleModel::Rf(out.model), log(out.best_index, entries))
        }
        EnsembleKind::Svm => {
            let out = search(&cfg.ensemble.svm, rows, draws, seed)?;
            let entries = out.log.iter().map(|d| (d.index, d.auc, serde_json::to_string(&d.hyper).expect("serialisable hyperparameters"))).collect();
            (EnsembleModel::Svm(out.model), log(out.best_index, entries))
        }
    })
}

fn write_tuning_log(path: &Path, rows: &[TuningRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for r in rows {
        w.serialize(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(CliError::output(path))
}

fn save_model(path: &Path, model: &EnsembleModel) -> Result<()> {
    write_text(path, &model.to_json()?)
}

fn load_model(path: &Path) -> Result<EnsembleModel> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read model {}: {e}", path.display())))?;
    Ok(EnsembleModel::from_json(&text)?)
}

// ---------------------------------------------------------------- evaluation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedMetrics {
    pub model: String,
    pub metrics: MetricsReport,
}

/// Contents of `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub test_samples: usize,
    /// Autoencoder decision rule: `log_mse >= threshold` is anomalous.
    pub ae_log_mse_threshold: f64,
    /// Model whose outcomes fill `scatter.csv`.
    pub scatter_model: String,
    pub models: Vec<NamedMetrics>,
}

impl EvalSummary {
    pub fn get(&self, model: &str) -> Option<&MetricsReport> {
        self.models.iter().find(|m| m.model == model).map(|m| &m.metrics)
    }
}

fn outcome(pred: u8, label: u8) -> &'static str {
    match (pred, label) {
        (1, 1) => "TP",
        (0, 0) => "TN",
        (1, 0) => "FP",
        _ => "FN",
    }
}

/// Scores and thresholded labels of the three base learners on `f`.
fn base_predictions(f: &FeatureVector, ae_threshold: f64) -> [(f64, u8); 3] {
    [
        (f.logit_margin, u8::from(f.logit_margin >= 0.0)),
        (f.log_mse, u8::from(f.log_mse >= ae_threshold)),
        (f.semi_prob, u8::from(f.semi_prob >= 0.5)),
    ]
}

fn evaluate<T: Element>(
    bundle: &ModelBundle<T>,
    data: &Datasets,
    fit: &[FeatureRow],
    models: &[EnsembleModel],
    dir: &Path,
) -> Result<EvalSummary> {
    let labels: Vec<u8> = data.test.iter().map(|s| s.label.binary().expect("labeled test sample")).collect();
    if !labels.contains(&0) || !labels.contains(&1) {
        let only = if labels.contains(&1) { "anomaly only" } else if labels.is_empty() { "empty" } else { "normal only" };
        return Err(CliError::SingleClassTest(only.into()));
    }
    let tagged: Vec<(&str, &Sample)> = data.test.iter().map(|s| ("test", s)).collect();
    let rows = feature_rows(bundle, &tagged)?;
    write_feature_csv(&dir.join(TEST_FEATURES), &rows)?;
    let classes: Vec<&str> = data.test.iter().map(|s| s.source_class.as_str()).collect();

    let fit_log_mse: Vec<f64> = fit.iter().map(|r| r.log_mse).collect();
    let fit_labels: Vec<u8> = fit.iter().map(|r| r.label).collect();
    let ae_threshold = youden_threshold(&fit_log_mse, &fit_labels)?;

    let mut columns: Vec<(String, Vec<(f64, u8)>)> = Learner::ALL.iter().map(|l| (l.to_string(), Vec::new())).collect();
    for r in &rows {
        for (k, p) in base_predictions(&r.features(), ae_threshold).into_iter().enumerate() {
            columns[k].1.push(p);
        }
    }
    for m in models {
        let name = match m {
            EnsembleModel::Rf(_) => "rf",
            EnsembleModel::Svm(_) => "svm",
        };
        let preds = rows.iter().map(|r| m.predict(&r.features().to_vec()).map(|(l, s)| (s, l))).collect::<std::result::Result<_, _>>()?;
        columns.push((name.to_string(), preds));
    }

    // The first ensemble colours the scatter; without one, the classifier.
    let scatter_model = columns.get(Learner::ALL.len()).unwrap_or(&columns[0]).0.clone();
    let mut summary = EvalSummary { test_samples: rows.len(), ae_log_mse_threshold: ae_threshold, scatter_model, models: Vec::new() };
    let per_class_path = dir.join(PER_CLASS);
    let mut per_class = csv_writer(&per_class_path)?;
    per_class.write_record(["model", "source_class", "proportion"]).map_err(csv_err(&per_class_path))?;
    for (name, preds) in &columns {
        let scores: Vec<f64> = preds.iter().map(|p| p.0).collect();
        let labels_hat: Vec<u8> = preds.iter().map(|p| p.1).collect();
        let report = MetricsReport::evaluate(&scores, &labels_hat, &labels, &classes)?;
        for (class, prop) in &report.per_class_proportion {
            per_class.write_record([name.as_str(), class.as_str(), &prop.to_string()]).map_err(csv_err(&per_class_path))?;
        }
        summary.models.push(NamedMetrics { model: name.clone(), metrics: report });
    }
    per_class.flush().map_err(CliError::output(&per_class_path))?;

    let scatter_path = dir.join(SCATTER);
    let mut scatter = csv_writer(&scatter_path)?;
    scatter.write_record(["logit_margin", "log_mse", "outcome"]).map_err(csv_err(&scatter_path))?;
    let chosen = &columns.iter().find(|c| c.0 == summary.scatter_model).expect("scatter model evaluated").1;
    for ((r, p), &l) in rows.iter().zip(chosen).zip(&labels) {
        scatter.write_record([r.logit_margin.to_string(), r.log_mse.to_string(), outcome(p.1, l).to_string()]).map_err(csv_err(&scatter_path))?;
    }
    scatter.flush().map_err(CliError::output(&scatter_path))?;

    write_json(&dir.join(METRICS), &summary)?;
    Ok(summary)
}

/// Table-style rows in percent, one per evaluated model.
pub fn format_table(summary: &EvalSummary) -> String {
    let mut out = format!("{:<6}", "Model");
    for c in TABLE_COLUMNS {
        out.push_str(&format!(" | {c:>9}"));
    }
    out.push('\n');
    for m in &summary.models {
        out.push_str(&format!("{:<6}", m.model));
        for v in m.metrics.percent_row() {
            out.push_str(&format!(" | {v:>9}"));
        }
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------- commands

/// Writes `normal + anomaly` PNGs and a manifest into `out`.
pub fn cmd_synth(normal: usize, anomaly: usize, size: usize, seed: u64, out: &Path) -> Result<PathBuf> {
    if size == 0 {
        return Err(CliError::Usage("--size must be positive".into()));
    }
    let images = out.join("images");
    fs::create_dir_all(&images).map_err(CliError::output(&images))?;
    let samples = synth_dataset(normal, anomaly, size, seed);
    let names: Vec<String> = (0..samples.len()).map(|i| format!("images/{i:05}.png")).collect();
    for (s, name) in samples.iter().zip(&names) {
        let path = out.join(name);
        s.image.save(&path).map_err(|e| CliError::Output { path: path.clone(), source: std::io::Error::other(e) })?;
    }
    let manifest = out.join("manifest.csv");
    write_manifest(&manifest, samples.iter().zip(&names).map(|(s, n)| (n.as_str(), s.source_class.as_str(), s.patient_id.as_str())))
        .map_err(|e| match e {
            DataError::Io { path, source } => CliError::Output { path, source },
            other => other.into(),
        })?;
    Ok(manifest)
}

pub struct TrainOutcome {
    pub dir: PathBuf,
    pub report: TrainReport,
}

pub fn cmd_train(cfg: &RunConfig, learner: Learner) -> Result<TrainOutcome> {
    let data = load_datasets(cfg)?;
    let dir = begin_run(cfg)?;
    data.split.save(&dir.join(SPLIT))?;
    let report = match cfg.precision {
        Precision::F32 => train_learner::<f32>(cfg, learner, &data, &dir)?.1,
        Precision::F64 => train_learner::<f64>(cfg, learner, &data, &dir)?.1,
    };
    Ok(TrainOutcome { dir, report })
}

fn fit_ensemble_in<T: Element>(cfg: &RunConfig, kind: EnsembleKind, paths: &BundlePaths, dir: &Path) -> Result<()> {
    let bundle = paths.load::<T>()?;
    let data = load_datasets(cfg)?;
    let rows = fit_rows(&bundle, &data)?;
    write_feature_csv(&dir.join(FEATURES), &rows)?;
    let (model, log) = fit_ensemble(cfg, kind, &rows)?;
    save_model(&dir.join(kind.model_file()), &model)?;
    write_tuning_log(&dir.join(TUNING_LOG), &log)
}

pub fn cmd_fit_ensemble(cfg: &RunConfig, kind: EnsembleKind, paths: &BundlePaths) -> Result<PathBuf> {
    let precision = paths.precision()?;
    let dir = begin_run(cfg)?;
    match precision {
        Precision::F32 => fit_ensemble_in::<f32>(cfg, kind, paths, &dir)?,
        Precision::F64 => fit_ensemble_in::<f64>(cfg, kind, paths, &dir)?,
    }
    Ok(dir)
}

fn eval_in<T: Element>(cfg: &RunConfig, models: &[EnsembleModel], paths: &BundlePaths, dir: &Path) -> Result<EvalSummary> {
    let bundle = paths.load::<T>()?;
    let data = load_datasets(cfg)?;
    let fit = fit_rows(&bundle, &data)?;
    evaluate(&bundle, &data, &fit, models, dir)
}

pub fn cmd_eval(cfg: &RunConfig, model_paths: &[PathBuf], paths: &BundlePaths) -> Result<(PathBuf, EvalSummary)> {
    let models = model_paths.iter().map(|p| load_model(p)).collect::<Result<Vec<_>>>()?;
    let precision = paths.precision()?;
    let dir = begin_run(cfg)?;
    let summary = match precision {
        Precision::F32 => eval_in::<f32>(cfg, &models, paths, &dir)?,
        Precision::F64 => eval_in::<f64>(cfg, &models, paths, &dir)?,
    };
    Ok((dir, summary))
}

fn pipeline_in<T: Element>(cfg: &RunConfig, dir: &Path) -> Result<EvalSummary> {
    let data = load_datasets(cfg)?;
    data.split.save(&dir.join(SPLIT))?;
    let labels: Vec<u8> = data.test.iter().filter_map(|s| s.label.binary()).collect();
    if !labels.contains(&0) || !labels.contains(&1) {
        return Err(CliError::SingleClassTest(format!("{} labeled test samples", labels.len())));
    }
    let (clf, _) = train_learner::<T>(cfg, Learner::Classifier, &data, dir)?;
    let (ae, _) = train_learner::<T>(cfg, Learner::Autoencoder, &data, dir)?;
    let (semi, _) = train_learner::<T>(cfg, Learner::Semi, &data, dir)?;
    let bundle = ModelBundle::from_parts(clf, ae, semi)?;
    let rows = fit_rows(&bundle, &data)?;
    write_feature_csv(&dir.join(FEATURES), &rows)?;
    let mut models = Vec::new();
    let mut log = Vec::new();
    for kind in EnsembleKind::ALL {
        let (model, mut entries) = fit_ensemble(cfg, kind, &rows)?;
        save_model(&dir.join(kind.model_file()), &model)?;
        models.push(model);
        log.append(&mut entries);
    }
    write_tuning_log(&dir.join(TUNING_LOG), &log)?;
    evaluate(&bundle, &data, &rows, &models, dir)
}

/// Data, the three learners, both ensembles and evaluation in one run
/// directory.
pub fn cmd_pipeline(cfg: &RunConfig) -> Result<(PathBuf, EvalSummary)> {
    let dir = begin_run(cfg)?;
    let summary = match cfg.precision {
        Precision::F32 => pipeline_in::<f32>(cfg, &dir)?,
        Precision::F64 => pipeline_in::<f64>(cfg, &dir)?,
    };
    Ok((dir, summary))
}
