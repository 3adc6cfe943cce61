//! End-to-end pipeline behind the command-line driver: configuration,
//! preprocessing stages, model artifacts and the command implementations.
//!
//! Stage order is load, encode, anomaly filter, balance, select, fit. The
//! `paper` protocol runs every preprocessing stage on the full data and
//! splits afterwards; `leakage_safe` splits first and fits the filter, the
//! resampler and the selector on the training portion only.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::dataset::{
    correlation_matrix, describe_numeric, frequency_tables, load_csv, read_features, stratified_split, Dataset,
    FeatureSchema, LabelEncoding,
};
use crate::ensemble::{BaggingConfig, StackingConfig, VotingConfig};
use crate::error::{Error, Result, StageExt};
use crate::eval::{evaluate_predictions, render_report, ModelReport, RenderedReport, TABLE_COLUMNS};
use crate::learners::{
    AdaBoostConfig, Classifier, ForestConfig, GbmConfig, LogisticConfig, Model, ModelConfig, TreeConfig,
};
use crate::neural::{Monitor, TrainLog};
use crate::par;
use crate::preprocess::{filter_anomalies, fit_isolation_forest, select_k_best, IsolationConfig, SelectorState};
use crate::resample::{balance, PlanStrategy, DEFAULT_SMOTE_K};
use crate::rng::Seed;
use crate::tune::{grid_search, merge_params, random_search, CvSpec, LossKind, ParamGrid, TuneResult};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    #[default]
    LeakageSafe,
    PaperProtocol,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemaPreset {
    Gorkha,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SchemaSpec {
    Preset(SchemaPreset),
    Explicit(FeatureSchema),
}

impl SchemaSpec {
    pub fn resolve(&self) -> Result<FeatureSchema> {
        match self {
            SchemaSpec::Preset(SchemaPreset::Gorkha) => Ok(FeatureSchema::gorkha()),
            SchemaSpec::Explicit(s) => {
                s.validate()?;
                Ok(s.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub path: PathBuf,
    #[serde(default = "gorkha_schema")]
    pub schema: SchemaSpec,
    /// Stratified subsample taken right after loading.
    #[serde(default)]
    pub max_rows: Option<usize>,
}

fn gorkha_schema() -> SchemaSpec {
    SchemaSpec::Preset(SchemaPreset::Gorkha)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnomalyConfig {
    pub enabled: bool,
    pub n_trees: usize,
    pub subsample: Option<usize>,
    pub contamination: f64,
}

impl Default for AnomalyConfig {
    fn default() -> Self {
        let d = IsolationConfig::default();
        AnomalyConfig {
            enabled: true,
            n_trees: d.n_trees,
            subsample: d.subsample,
            contamination: d.contamination,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResampleConfig {
    pub enabled: bool,
    pub strategy: PlanStrategy,
    pub smote_k: usize,
}

impl Default for ResampleConfig {
    fn default() -> Self {
        ResampleConfig {
            enabled: true,
            strategy: PlanStrategy::default(),
            smote_k: DEFAULT_SMOTE_K,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectConfig {
    /// `None` keeps every feature.
    pub k: Option<usize>,
}

impl Default for SelectConfig {
    fn default() -> Self {
        SelectConfig { k: Some(20) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEntry {
    pub name: String,
    pub model: ModelConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SearchKind {
    Grid,
    Random { n_samples: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuningConfig {
    /// Name of the roster entry whose configuration is the base.
    pub model: String,
    pub grid: ParamGrid,
    #[serde(default = "grid_search_kind")]
    pub search: SearchKind,
    #[serde(default = "default_folds")]
    pub k: usize,
    #[serde(default = "yes")]
    pub stratified: bool,
    #[serde(default)]
    pub loss: LossKind,
}

fn grid_search_kind() -> SearchKind {
    SearchKind::Grid
}

fn default_folds() -> usize {
    5
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub protocol: Protocol,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub anomaly: AnomalyConfig,
    #[serde(default)]
    pub resample: ResampleConfig,
    #[serde(default)]
    pub select: SelectConfig,
    #[serde(default = "default_roster")]
    pub models: Vec<ModelEntry>,
    #[serde(default)]
    pub tuning: Option<TuningConfig>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: Seed,
}

fn default_test_fraction() -> f64 {
    0.2
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn entry(name: &str, model: ModelConfig) -> ModelEntry {
    ModelEntry {
        name: name.to_string(),
        model,
    }
}

/// Default roster of ten models. The entries named LightGBM and
/// XGBClassifier are gradient boosting configurations, not those libraries.
pub fn default_roster() -> Vec<ModelEntry> {
    vec![
        entry("Logistic Regression", ModelConfig::Logistic(LogisticConfig::default())),
        entry("Decision Tree", ModelConfig::DecisionTree(TreeConfig::default())),
        entry("Random Forest", ModelConfig::RandomForest(ForestConfig::default())),
        entry("GBM", ModelConfig::Gbm(GbmConfig::default())),
        entry("AdaBoost", ModelConfig::AdaBoost(AdaBoostConfig::default())),
        entry(
            "LightGBM",
            ModelConfig::Gbm(GbmConfig {
                n_rounds: 200,
                learning_rate: 0.05,
                max_depth: 6,
                ..Default::default()
            }),
        ),
        entry(
            "XGBClassifier",
            ModelConfig::Gbm(GbmConfig {
                n_rounds: 150,
                learning_rate: 0.1,
                max_depth: 4,
                ..Default::default()
            }),
        ),
        entry("Voting Classifier", ModelConfig::Voting(VotingConfig::default())),
        entry("Stacking Classifier", ModelConfig::Stacking(StackingConfig::default())),
        entry("Bagging Classifier", ModelConfig::Bagging(BaggingConfig::default())),
    ]
}

/// Flag values that take precedence over the configuration file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub protocol: Option<Protocol>,
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: PipelineConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    /// Reads a config file; relative dataset and output paths are taken
    /// relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut c = Self::from_json(&text)?;
        if let Some(dir) = path.parent() {
            for p in [&mut c.dataset.path, &mut c.output_dir] {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(c)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = Seed(s);
        }
        if let Some(d) = &o.output_dir {
            self.output_dir = d.clone();
        }
        if let Some(p) = o.protocol {
            self.protocol = p;
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.schema.resolve().map_err(|e| Error::Config(e.to_string()))?;
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config(format!("test_fraction {} not in (0, 1)", self.test_fraction)));
        }
        if !(0.0..0.5).contains(&self.anomaly.contamination) {
            return Err(Error::Config(format!("contamination {} not in [0, 0.5)", self.anomaly.contamination)));
        }
        if self.anomaly.n_trees == 0 {
            return Err(Error::Config("anomaly.n_trees must be positive".into()));
        }
        if self.resample.smote_k == 0 {
            return Err(Error::Config("resample.smote_k must be positive".into()));
        }
        if self.select.k == Some(0) {
            return Err(Error::Config("select.k must be positive".into()));
        }
        if self.models.is_empty() {
            return Err(Error::Config("model roster is empty".into()));
        }
        let mut names = std::collections::BTreeSet::new();
        for m in &self.models {
            if !names.insert(slug(&m.name)) {
                return Err(Error::Config(format!("duplicate model name {:?}", m.name)));
            }
        }
        if let Some(t) = &self.tuning {
            if !self.models.iter().any(|m| m.name == t.model) {
                return Err(Error::Config(format!("tuning model {:?} is not in the roster", t.model)));
            }
            t.grid.validate()?;
            if t.k < 2 {
                return Err(Error::Config("tuning.k must be at least 2".into()));
            }
        }
        Ok(())
    }

    /// SHA-256 of the serialised configuration, leaving out where outputs go.
    pub fn digest(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serialises");
        if let Some(map) = value.as_object_mut() {
            map.remove("output_dir");
        }
        sha256_hex(value.to_string().as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// File-name form of a model name.
pub fn slug(name: &str) -> String {
    let mut s = String::new();
    for c in name.chars() {
        if c.is_ascii_alphanumeric() {
            s.push(c.to_ascii_lowercase());
        } else if !s.ends_with('_') {
            s.push('_');
        }
    }
    s.trim_matches('_').to_string()
}

// ---------------------------------------------------------------------------
// Stages

/// Output of the preprocessing stages.
#[derive(Debug, Clone)]
pub struct Prepared {
    /// Training data after filtering, balancing and selection.
    pub train: Dataset,
    /// Held-out rows with every feature (selection is applied per artifact).
    pub holdout: Dataset,
    pub selector: SelectorState,
    pub stages: Vec<String>,
    pub counts: StageCounts,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    pub loaded: usize,
    pub removed_as_anomalies: usize,
    pub train_before_balance: usize,
    pub train: usize,
    pub holdout: usize,
}

pub fn load_dataset(config: &PipelineConfig) -> Result<Dataset> {
    let schema = config.dataset.schema.resolve()?;
    let ds = load_csv(&config.dataset.path, &schema)?;
    match config.dataset.max_rows {
        Some(m) if m < ds.n() => ds.stratified_subsample(m, config.seed.derive("subsample")),
        _ => Ok(ds),
    }
}

fn anomaly_filter(ds: &Dataset, cfg: &AnomalyConfig, seed: Seed) -> Result<Dataset> {
    let iso = IsolationConfig {
        n_trees: cfg.n_trees,
        subsample: cfg.subsample,
        contamination: cfg.contamination,
    };
    let model = fit_isolation_forest(ds, &iso, seed)?;
    filter_anomalies(ds, &model, cfg.contamination)
}

fn balance_stage(ds: &Dataset, cfg: &ResampleConfig, seed: Seed) -> Result<Dataset> {
    let plan = cfg.strategy.plan(ds, cfg.smote_k, seed)?;
    balance(ds, &plan)
}

fn select_stage(ds: &Dataset, k: Option<usize>) -> Result<SelectorState> {
    match k {
        Some(k) => {
            if k > ds.d() {
                return Err(Error::Config(format!("select.k = {k} exceeds the {} available features", ds.d())));
            }
            Ok(select_k_best(ds, k)?.0)
        }
        None => Ok(SelectorState::identity(ds.d())),
    }
}

pub fn prepare(config: &PipelineConfig) -> Result<Prepared> {
    prepare_inner(config, config.resample.enabled)
}

fn prepare_inner(config: &PipelineConfig, do_balance: bool) -> Result<Prepared> {
    let seed = config.seed;
    let mut stages = vec!["load".to_string(), "encode".to_string()];
    let ds = load_dataset(config).stage("load")?;
    let mut counts = StageCounts {
        loaded: ds.n(),
        ..Default::default()
    };
    let filter = |d: &Dataset, stages: &mut Vec<String>| -> Result<Dataset> {
        if config.anomaly.enabled {
            stages.push("anomaly_filter".into());
            anomaly_filter(d, &config.anomaly, seed.derive("anomaly")).stage("anomaly_filter")
        } else {
            Ok(d.clone())
        }
    };
    let rebalance = |d: &Dataset, stages: &mut Vec<String>| -> Result<Dataset> {
        if do_balance {
            stages.push("balance".into());
            balance_stage(d, &config.resample, seed.derive("resample")).stage("balance")
        } else {
            Ok(d.clone())
        }
    };
    let split = |d: &Dataset, stages: &mut Vec<String>| -> Result<(Dataset, Dataset)> {
        stages.push("split".into());
        stratified_split(d, config.test_fraction, seed.derive("split")).stage("split")
    };
    let (train, holdout, before) = match config.protocol {
        Protocol::PaperProtocol => {
            let filtered = filter(&ds, &mut stages)?;
            counts.removed_as_anomalies = ds.n() - filtered.n();
            let balanced = rebalance(&filtered, &mut stages)?;
            let (train, holdout) = split(&balanced, &mut stages)?;
            let n = train.n();
            (train, holdout, n)
        }
        Protocol::LeakageSafe => {
            let (train, holdout) = split(&ds, &mut stages)?;
            let filtered = filter(&train, &mut stages)?;
            counts.removed_as_anomalies = train.n() - filtered.n();
            let n = filtered.n();
            (rebalance(&filtered, &mut stages)?, holdout, n)
        }
    };
    stages.push("select".into());
    // the full-data protocol fits the selector on every row, holdout included
    let selector = match config.protocol {
        Protocol::PaperProtocol => {
            let all = concat(&train, &holdout)?;
            select_stage(&all, config.select.k)
        }
        Protocol::LeakageSafe => select_stage(&train, config.select.k),
    }
    .stage("select")?;
    counts.train_before_balance = before;
    counts.train = train.n();
    counts.holdout = holdout.n();
    Ok(Prepared {
        train: selector.transform(&train)?,
        holdout,
        selector,
        stages,
        counts,
    })
}

fn concat(a: &Dataset, b: &Dataset) -> Result<Dataset> {
    let x = ndarray::concatenate(ndarray::Axis(0), &[a.features().view(), b.features().view()])
        .map_err(|e| Error::invalid(e.to_string()))?;
    let mut y = a.labels().to_vec();
    y.extend_from_slice(b.labels());
    a.with_data(x, y)
}

// ---------------------------------------------------------------------------
// Artifacts

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArtifactMetadata {
    pub seed: Seed,
    pub config_digest: String,
    pub protocol: Protocol,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelArtifact {
    pub format_version: u32,
    pub name: String,
    pub kind: String,
    pub model: Model,
    pub selector: SelectorState,
    pub encoding: LabelEncoding,
    pub schema: FeatureSchema,
    pub metadata: ArtifactMetadata,
}

impl ModelArtifact {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &(serde_json::to_string_pretty(self)? + "\n"))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let name = path.display().to_string();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let a: ModelArtifact = serde_json::from_str(&text).map_err(|e| Error::Artifact {
            artifact: name.clone(),
            message: e.to_string(),
        })?;
        if a.format_version != FORMAT_VERSION {
            return Err(Error::Artifact {
                artifact: name,
                message: format!("format version {} is not supported", a.format_version),
            });
        }
        Ok(a)
    }

    /// Probabilities for rows carrying every schema feature.
    pub fn predict_proba(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.model.predict_proba(&self.selector.transform_matrix(x)?)
    }
}

/// Held-out rows written by `train` and read by `evaluate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HoldoutFile {
    pub format_version: u32,
    pub schema: FeatureSchema,
    pub n_classes: usize,
    #[serde(with = "crate::codec::array2")]
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub name: String,
    pub kind: String,
    pub file: String,
    pub sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_log: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub config_digest: String,
    pub seed: Seed,
    pub protocol: Protocol,
    pub stages: Vec<String>,
    pub counts: StageCounts,
    pub selected_features: Vec<String>,
    pub holdout: String,
    pub artifacts: Vec<ManifestEntry>,
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

// ---------------------------------------------------------------------------
// Commands

/// Numeric summaries, frequency tables and the correlation matrix. Nothing
/// is written unless every summary succeeds.
pub fn cmd_describe(config: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let ds = load_dataset(config).stage("load")?;
    let numeric = describe_numeric(&ds).stage("describe")?;
    let freq = frequency_tables(&ds).stage("describe")?;
    let corr = correlation_matrix(&ds).stage("describe")?;

    let numeric_map: Map<String, Value> = numeric
        .iter()
        .map(|(n, s)| Ok((n.clone(), serde_json::to_value(s)?)))
        .collect::<Result<_>>()?;
    let numeric_json = serde_json::to_string_pretty(&numeric_map)? + "\n";
    let mut freq_csv = String::from("column,n_unique,mode_code,mode_frequency\n");
    for (n, f) in &freq {
        let _ = writeln!(freq_csv, "{n},{},{},{}", f.n_unique, f.mode_code, f.mode_frequency);
    }
    let mut corr_csv = String::from("column");
    for c in &corr.columns {
        let _ = write!(corr_csv, ",{c}");
    }
    corr_csv.push('\n');
    for (c, row) in corr.columns.iter().zip(&corr.values) {
        corr_csv.push_str(c);
        for v in row {
            match v {
                Some(v) => {
                    let _ = write!(corr_csv, ",{v}");
                }
                None => corr_csv.push(','),
            }
        }
        corr_csv.push('\n');
    }
    let out = &config.output_dir;
    let files = [
        (out.join("numeric_stats.json"), numeric_json),
        (out.join("frequencies.csv"), freq_csv),
        (out.join("correlation.csv"), corr_csv),
    ];
    for (p, text) in &files {
        write_file(p, text)?;
    }
    Ok(files.into_iter().map(|(p, _)| p).collect())
}

/// The configuration a roster entry is fitted with. Under the leakage-safe
/// protocol a KAN that would monitor test loss monitors a validation split
/// instead.
fn effective_model(config: &PipelineConfig, m: &ModelConfig) -> ModelConfig {
    match (config.protocol, m) {
        (Protocol::LeakageSafe, ModelConfig::Kan(k)) if k.monitor == Monitor::TestLoss => {
            let mut k = k.clone();
            k.monitor = Monitor::Validation { fraction: 0.1 };
            ModelConfig::Kan(k)
        }
        _ => m.clone(),
    }
}

pub fn model_seed(config: &PipelineConfig, name: &str) -> Seed {
    config.seed.derive("model").derive(name)
}

#[derive(Debug)]
pub struct TrainOutput {
    pub manifest: Manifest,
    pub models: Vec<(String, Model, Option<TrainLog>)>,
}

pub fn cmd_train(config: &PipelineConfig) -> Result<TrainOutput> {
    let prep = prepare(config)?;
    let holdout_sel = prep.selector.transform(&prep.holdout)?;
    let fitted = par::try_map_range(config.models.len(), |i| {
        let entry = &config.models[i];
        let cfg = effective_model(config, &entry.model);
        cfg.fit_with_eval(&prep.train, Some(&holdout_sel), model_seed(config, &entry.name))
            .map_err(|e| Error::Stage {
                stage: "fit",
                source: Box::new(Error::Artifact {
                    artifact: entry.name.clone(),
                    message: e.to_string(),
                }),
            })
    })?;

    let out = &config.output_dir;
    let digest = config.digest();
    let holdout = HoldoutFile {
        format_version: FORMAT_VERSION,
        schema: prep.holdout.schema().clone(),
        n_classes: prep.holdout.n_classes(),
        features: prep.holdout.features().clone(),
        labels: prep.holdout.labels().to_vec(),
    };
    write_file(&out.join("holdout.json"), &(serde_json::to_string(&holdout)? + "\n"))?;

    let mut entries = Vec::new();
    let mut models = Vec::new();
    for (entry, (model, log)) in config.models.iter().zip(fitted) {
        let s = slug(&entry.name);
        let artifact = ModelArtifact {
            format_version: FORMAT_VERSION,
            name: entry.name.clone(),
            kind: model.kind().to_string(),
            model: model.clone(),
            selector: prep.selector.clone(),
            encoding: prep.train.encoding().clone(),
            schema: prep.holdout.schema().clone(),
            metadata: ArtifactMetadata {
                seed: config.seed,
                config_digest: digest.clone(),
                protocol: config.protocol,
            },
        };
        let file = format!("models/{s}.json");
        let text = serde_json::to_string_pretty(&artifact)? + "\n";
        write_file(&out.join(&file), &text)?;
        let train_log = match &log {
            Some(l) => {
                let f = format!("logs/{s}.csv");
                write_file(&out.join(&f), &l.to_csv())?;
                Some(f)
            }
            None => None,
        };
        entries.push(ManifestEntry {
            name: entry.name.clone(),
            kind: model.kind().to_string(),
            file,
            sha256: sha256_hex(text.as_bytes()),
            train_log,
        });
        models.push((entry.name.clone(), model, log));
    }
    let schema = prep.holdout.schema();
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        config_digest: digest,
        seed: config.seed,
        protocol: config.protocol,
        stages: prep.stages.clone(),
        counts: prep.counts.clone(),
        selected_features: prep.selector.selected.iter().map(|&j| schema.columns[j].name.clone()).collect(),
        holdout: "holdout.json".into(),
        artifacts: entries,
    };
    write_file(&out.join("manifest.json"), &(serde_json::to_string_pretty(&manifest)? + "\n"))?;
    Ok(TrainOutput { manifest, models })
}

/// Scores artifacts on the held-out rows written by `train`. With no
/// explicit list every artifact in the manifest is used.
pub fn cmd_evaluate(config: &PipelineConfig, artifacts: &[PathBuf]) -> Result<RenderedReport> {
    let out = &config.output_dir;
    let paths: Vec<PathBuf> = if artifacts.is_empty() {
        let manifest: Manifest = read_json(&out.join("manifest.json"))?;
        manifest.artifacts.iter().map(|a| out.join(&a.file)).collect()
    } else {
        artifacts.to_vec()
    };
    if paths.is_empty() {
        return Err(Error::invalid("empty report: no artifacts to evaluate"));
    }
    let holdout: HoldoutFile = read_json(&out.join("holdout.json"))?;
    let mut reports = Vec::with_capacity(paths.len());
    for p in &paths {
        let a = ModelArtifact::load(p)?;
        let mismatch = |message: String| Error::Artifact {
            artifact: p.display().to_string(),
            message,
        };
        if a.schema != holdout.schema {
            return Err(mismatch("schema differs from the held-out data".into()));
        }
        if a.model.n_classes() != holdout.n_classes {
            return Err(mismatch(format!(
                "model has {} classes, held-out data {}",
                a.model.n_classes(),
                holdout.n_classes
            )));
        }
        let proba = a.predict_proba(&holdout.features).map_err(|e| mismatch(e.to_string()))?;
        let pred: Vec<usize> = proba.rows().into_iter().map(crate::learners::argmax).collect();
        let metrics = evaluate_predictions(&holdout.labels, &pred, Some(&proba), holdout.n_classes)?;
        reports.push(ModelReport { model: a.name, metrics });
    }
    let rendered = render_report(&reports)?;
    write_file(&out.join("report.json"), &rendered.json)?;
    write_file(&out.join("report.txt"), &rendered.text)?;
    write_file(&out.join("report.csv"), &rendered.csv)?;
    Ok(rendered)
}

/// Data and CV settings `tune` searches over: the training portion after
/// filtering and selection, unbalanced; each fold's training part is
/// balanced inside the search when resampling is enabled.
pub fn tuning_setup(config: &PipelineConfig) -> Result<(Dataset, CvSpec, TuningConfig, ModelConfig)> {
    let t = config
        .tuning
        .clone()
        .ok_or_else(|| Error::Config("configuration has no tuning section".into()))?;
    let base = config
        .models
        .iter()
        .find(|m| m.name == t.model)
        .map(|m| effective_model(config, &m.model))
        .ok_or_else(|| Error::Config(format!("tuning model {:?} is not in the roster", t.model)))?;
    let prep = prepare_inner(config, false)?;
    let spec = CvSpec {
        k: t.k,
        stratified: t.stratified,
        seed: config.seed.derive("cv"),
        loss: t.loss,
        balance: config.resample.enabled.then(|| config.resample.strategy.clone()),
    };
    Ok((prep.train, spec, t, base))
}

pub fn cmd_tune(config: &PipelineConfig) -> Result<TuneResult> {
    let (ds, spec, t, base) = tuning_setup(config)?;
    let factory = |p: &Map<String, Value>| merge_params(&base, p);
    let result = match t.search {
        SearchKind::Grid => grid_search(&ds, &t.grid, &factory, &spec),
        SearchKind::Random { n_samples } => random_search(&ds, &t.grid, n_samples, &factory, &spec),
    }
    .stage("tune")?;
    write_file(&config.output_dir.join("tune.json"), &(serde_json::to_string_pretty(&result)? + "\n"))?;
    Ok(result)
}

/// Predictions CSV: `row_id`, the decoded grade, then one probability
/// column per raw grade.
pub fn cmd_predict(artifact: &Path, input: &Path, output: &Path) -> Result<usize> {
    let a = ModelArtifact::load(artifact)?;
    let (x, _) = read_features(input, &a.schema, &a.encoding)?;
    let proba = a.predict_proba(&x)?;
    let raw: Vec<String> = (0..proba.ncols())
        .map(|c| a.encoding.decode_target(c).map(str::to_string).unwrap_or_else(|| c.to_string()))
        .collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["row_id".to_string(), a.schema.target.clone()];
    header.extend(raw.iter().map(|r| format!("proba_{r}")));
    w.write_record(&header)?;
    for (i, row) in proba.rows().into_iter().enumerate() {
        let c = crate::learners::argmax(row);
        let mut rec = vec![i.to_string(), raw[c].clone()];
        rec.extend(row.iter().map(|p| p.to_string()));
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
    write_file(output, &String::from_utf8(bytes).expect("utf-8 csv"))?;
    Ok(proba.nrows())
}

/// Reference per-class rows (precision, recall, F1, accuracy, macro avg,
/// weighted avg) for the ten-model comparison on the full building data.
pub const REFERENCE_TABLES: [[(&str, [f64; 6]); 10]; 3] = [
    [
        ("Logistic Regression", [0.85, 0.90, 0.87, 0.89, 0.89, 0.89]),
        ("Decision Tree", [0.90, 0.94, 0.92, 0.94, 0.94, 0.94]),
        ("Random Forest", [0.94, 0.97, 0.96, 0.96, 0.96, 0.96]),
        ("GBM", [0.94, 0.97, 0.95, 0.96, 0.96, 0.96]),
        ("AdaBoost", [0.79, 0.89, 0.83, 0.87, 0.87, 0.87]),
        ("LightGBM", [0.94, 0.97, 0.95, 0.96, 0.96, 0.96]),
        ("XGBClassifier", [0.93, 0.97, 0.95, 0.95, 0.95, 0.96]),
        ("Voting Classifier", [0.95, 0.96, 0.95, 0.96, 0.96, 0.96]),
        ("Stacking Classifier", [0.94, 0.97, 0.95, 0.96, 0.96, 0.96]),
        ("Bagging Classifier", [0.93, 0.97, 0.95, 0.96, 0.96, 0.96]),
    ],
    [
        ("Logistic Regression", [0.89, 0.83, 0.86, 0.89, 0.89, 0.89]),
        ("Decision Tree", [0.93, 0.91, 0.92, 0.94, 0.94, 0.94]),
        ("Random Forest", [0.97, 0.93, 0.95, 0.96, 0.96, 0.96]),
        ("GBM", [0.95, 0.94, 0.94, 0.96, 0.96, 0.96]),
        ("AdaBoost", [0.87, 0.77, 0.82, 0.87, 0.87, 0.87]),
        ("LightGBM", [0.95, 0.94, 0.94, 0.96, 0.96, 0.96]),
        ("XGBClassifier", [0.94, 0.93, 0.94, 0.95, 0.95, 0.95]),
        ("Voting Classifier", [0.95, 0.94, 0.94, 0.96, 0.96, 0.96]),
        ("Stacking Classifier", [0.95, 0.94, 0.95, 0.96, 0.96, 0.96]),
        ("Bagging Classifier", [0.95, 0.93, 0.94, 0.96, 0.96, 0.96]),
    ],
    [
        ("Logistic Regression", [0.94, 0.93, 0.94, 0.89, 0.89, 0.89]),
        ("Decision Tree", [0.98, 0.97, 0.98, 0.94, 0.94, 0.94]),
        ("Random Forest", [0.97, 0.98, 0.98, 0.96, 0.96, 0.96]),
        ("GBM", [0.99, 0.97, 0.98, 0.96, 0.96, 0.96]),
        ("AdaBoost", [0.95, 0.94, 0.94, 0.87, 0.87, 0.87]),
        ("LightGBM", [0.99, 0.97, 0.98, 0.96, 0.96, 0.96]),
        ("XGBClassifier", [0.99, 0.97, 0.98, 0.95, 0.95, 0.96]),
        ("Voting Classifier", [0.97, 0.97, 0.97, 0.96, 0.96, 0.96]),
        ("Stacking Classifier", [0.99, 0.97, 0.98, 0.96, 0.96, 0.96]),
        ("Bagging Classifier", [0.99, 0.97, 0.98, 0.96, 0.96, 0.96]),
    ],
];

pub fn reference_row(class: usize, name: &str) -> Option<[f64; 6]> {
    REFERENCE_TABLES.get(class)?.iter().find(|(n, _)| *n == name).map(|(_, v)| *v)
}

/// Side-by-side text of `report.json` rows against the reference rows of
/// the same name.
pub fn cmd_report(config: &PipelineConfig) -> Result<String> {
    let out = &config.output_dir;
    let reports: Vec<ModelReport> = read_json(&out.join("report.json"))?;
    if reports.is_empty() {
        return Err(Error::invalid("empty report"));
    }
    let name_w = reports.iter().map(|r| r.model.len()).max().unwrap_or(0).max(9);
    let mut text = String::new();
    let n_classes = reports.iter().map(|r| r.metrics.per_class.len()).max().unwrap_or(0);
    for class in 0..n_classes {
        if class > 0 {
            text.push('\n');
        }
        let _ = writeln!(text, "Class {class}: measured / reference");
        let _ = write!(text, "{:<name_w$}", "Algorithm");
        for c in TABLE_COLUMNS {
            let _ = write!(text, "  {c:>13}");
        }
        text.push('\n');
        for r in reports.iter().filter(|r| class < r.metrics.per_class.len()) {
            let ours = crate::eval::table_row(&r.metrics, class);
            let reference = reference_row(class, &r.model);
            let _ = write!(text, "{:<name_w$}", r.model);
            for (i, v) in ours.iter().enumerate() {
                let cell = match reference {
                    Some(p) => format!("{v:.2} / {:.2}", p[i]),
                    None => format!("{v:.2} / -"),
                };
                let _ = write!(text, "  {cell:>13}");
            }
            text.push('\n');
        }
    }
    write_file(&out.join("comparison.txt"), &text)?;
    Ok(text)
}
