//! k-fold cross-validation with grid and random hyperparameter search.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::eval::{class_metrics, confusion_matrix};
use crate::learners::{cross_entropy, Classifier, ModelConfig};
use crate::par;
use crate::resample::{balance, PlanStrategy, DEFAULT_SMOTE_K};
use crate::rng::Seed;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    OneMinusAccuracy,
    #[default]
    OneMinusMacroF1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CvSpec {
    pub k: usize,
    pub stratified: bool,
    pub seed: Seed,
    pub loss: LossKind,
    /// Balance each fold's training portion; validation is never resampled.
    pub balance: Option<PlanStrategy>,
}

impl Default for CvSpec {
    fn default() -> Self {
        CvSpec {
            k: 5,
            stratified: true,
            seed: Seed::default(),
            loss: LossKind::default(),
            balance: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Rows are shuffled (per class when stratified), laid end to end and dealt
/// to folds by position modulo `k`, so fold sizes differ by at most one and
/// each class is spread within one instance of evenly.
pub fn k_fold_split(ds: &Dataset, spec: &CvSpec) -> Result<Vec<Fold>> {
    let k = spec.k;
    if k < 2 {
        return Err(Error::invalid("k-fold needs k >= 2"));
    }
    if ds.n() < k {
        return Err(Error::invalid(format!("{} rows cannot fill {k} folds", ds.n())));
    }
    let mut rng = spec.seed.derive("k_fold").rng();
    let order: Vec<usize> = if spec.stratified {
        let mut all = Vec::with_capacity(ds.n());
        for (c, mut rows) in ds.class_rows().into_iter().enumerate() {
            if rows.is_empty() {
                continue;
            }
            if rows.len() < k {
                return Err(Error::Stratification(format!(
                    "class {c} has {} instance(s), fewer than {k} folds",
                    rows.len()
                )));
            }
            rows.shuffle(&mut rng);
            all.extend(rows);
        }
        all
    } else {
        let mut all: Vec<usize> = (0..ds.n()).collect();
        all.shuffle(&mut rng);
        all
    };
    let mut assignment = vec![0usize; ds.n()];
    for (pos, &row) in order.iter().enumerate() {
        assignment[row] = pos % k;
    }
    Ok((0..k)
        .map(|f| {
            let (validation, train): (Vec<usize>, Vec<usize>) = (0..ds.n()).partition(|&r| assignment[r] == f);
            Fold { train, validation }
        })
        .collect())
}

/// One candidate: parameter name to JSON value.
pub type CandidateParams = Map<String, Value>;

/// Named axes, each a non-empty list of JSON values.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamGrid {
    pub axes: Vec<(String, Vec<Value>)>,
}

impl ParamGrid {
    pub fn new(axes: Vec<(String, Vec<Value>)>) -> Result<Self> {
        let g = ParamGrid { axes };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (name, values) in &self.axes {
            if values.is_empty() {
                return Err(Error::Config(format!("grid axis {name:?} is empty")));
            }
            if !seen.insert(name) {
                return Err(Error::Config(format!("grid axis {name:?} repeated")));
            }
        }
        Ok(())
    }

    pub fn size(&self) -> usize {
        self.axes.iter().map(|(_, v)| v.len()).product()
    }

    fn assemble(&self, idx: &[usize]) -> Map<String, Value> {
        self.axes
            .iter()
            .zip(idx)
            .map(|((name, values), &i)| (name.clone(), values[i].clone()))
            .collect()
    }

    /// Cartesian product, last axis varying fastest.
    pub fn candidates(&self) -> Vec<Map<String, Value>> {
        let mut out = Vec::with_capacity(self.size());
        for flat in 0..self.size() {
            let mut idx = vec![0; self.axes.len()];
            let mut rest = flat;
            for (a, (_, values)) in self.axes.iter().enumerate().rev() {
                idx[a] = rest % values.len();
                rest /= values.len();
            }
            out.push(self.assemble(&idx));
        }
        out
    }

    /// `n_samples` independent uniform draws per axis, duplicates removed
    /// keeping first occurrences.
    pub fn sample(&self, n_samples: usize, seed: Seed) -> Vec<Map<String, Value>> {
        let mut rng = seed.derive("random_search").rng();
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for _ in 0..n_samples {
            let idx: Vec<usize> = self.axes.iter().map(|(_, v)| rng.random_range(0..v.len())).collect();
            if seen.insert(idx.clone()) {
                out.push(self.assemble(&idx));
            }
        }
        out
    }
}

impl<'de> Deserialize<'de> for ParamGrid {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let map = Map::<String, Value>::deserialize(d)?;
        let mut axes = Vec::with_capacity(map.len());
        for (name, v) in map {
            match v {
                Value::Array(values) => axes.push((name, values)),
                other => axes.push((name, vec![other])),
            }
        }
        let g = ParamGrid { axes };
        g.validate().map_err(serde::de::Error::custom)?;
        Ok(g)
    }
}

impl Serialize for ParamGrid {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let map: Map<String, Value> = self.axes.iter().map(|(n, v)| (n.clone(), Value::Array(v.clone()))).collect();
        map.serialize(s)
    }
}

/// Builds a learner configuration from one candidate's parameters.
pub type Factory<'a> = dyn Fn(&Map<String, Value>) -> Result<ModelConfig> + Sync + 'a;

/// Overrides keys of `base` (dotted paths reach nested objects) and
/// re-validates the result.
pub fn merge_params(base: &ModelConfig, params: &Map<String, Value>) -> Result<ModelConfig> {
    let mut v = serde_json::to_value(base)?;
    for (path, value) in params {
        let mut cursor = &mut v;
        let parts: Vec<&str> = path.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let obj = cursor
                .as_object_mut()
                .ok_or_else(|| Error::Config(format!("parameter path {path:?} does not name an object field")))?;
            if i + 1 == parts.len() {
                obj.insert(part.to_string(), value.clone());
                break;
            }
            cursor = obj
                .get_mut(*part)
                .ok_or_else(|| Error::Config(format!("parameter path {path:?} not found")))?;
        }
    }
    serde_json::from_value(v).map_err(|e| Error::Config(format!("candidate {params:?}: {e}")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateResult {
    pub params: Map<String, Value>,
    pub fold_losses: Vec<f64>,
    /// `None` when training or evaluation failed; ranked worst.
    pub mean_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub loss: LossKind,
    pub k: usize,
    /// In exploration order.
    pub candidates: Vec<CandidateResult>,
    pub best: usize,
}

impl TuneResult {
    pub fn best_candidate(&self) -> &CandidateResult {
        &self.candidates[self.best]
    }
}

/// Stream for one candidate, keyed by its parameters rather than its
/// position so exploration order does not matter.
pub fn candidate_seed(spec: &CvSpec, params: &Map<String, Value>) -> Seed {
    let key = serde_json::to_string(&canonical(params)).expect("json map");
    spec.seed.derive("candidate").derive(&key)
}

fn canonical(params: &Map<String, Value>) -> std::collections::BTreeMap<&String, &Value> {
    params.iter().collect()
}

fn fold_loss(loss: LossKind, model: &crate::learners::Model, val: &Dataset) -> Result<f64> {
    let proba = model.predict_proba(val.features())?;
    Ok(match loss {
        LossKind::CrossEntropy => cross_entropy(&proba, val.labels()),
        LossKind::OneMinusAccuracy | LossKind::OneMinusMacroF1 => {
            let pred: Vec<usize> = proba.rows().into_iter().map(crate::learners::argmax).collect();
            let m = class_metrics(&confusion_matrix(val.labels(), &pred, val.n_classes())?)?;
            if loss == LossKind::OneMinusAccuracy {
                1.0 - m.accuracy
            } else {
                1.0 - m.macro_avg.f1
            }
        }
    })
}

/// Training / validation datasets per fold, balanced if configured.
pub fn prepare_folds(ds: &Dataset, spec: &CvSpec) -> Result<Vec<(Dataset, Dataset)>> {
    let folds = k_fold_split(ds, spec)?;
    folds
        .iter()
        .enumerate()
        .map(|(f, fold)| {
            let mut train = ds.select_rows(&fold.train);
            if let Some(strategy) = &spec.balance {
                let plan = strategy.plan(&train, DEFAULT_SMOTE_K, spec.seed.derive("balance").child(f as u64))?;
                train = balance(&train, &plan)?;
            }
            Ok((train, ds.select_rows(&fold.validation)))
        })
        .collect()
}

fn evaluate_one(folds: &[(Dataset, Dataset)], params: &Map<String, Value>, factory: &Factory, spec: &CvSpec) -> CandidateResult {
    let seed = candidate_seed(spec, params);
    let run = || -> Result<Vec<f64>> {
        let config = factory(params)?;
        folds
            .iter()
            .enumerate()
            .map(|(f, (train, val))| {
                let model = config.fit(train, seed.child(f as u64))?;
                let l = fold_loss(spec.loss, &model, val)?;
                if l.is_finite() {
                    Ok(l)
                } else {
                    Err(Error::invalid(format!("non-finite loss on fold {f}")))
                }
            })
            .collect()
    };
    match run() {
        Ok(fold_losses) => CandidateResult {
            params: params.clone(),
            mean_loss: Some(fold_losses.iter().sum::<f64>() / fold_losses.len() as f64),
            fold_losses,
            error: None,
        },
        Err(e) => CandidateResult {
            params: params.clone(),
            fold_losses: Vec::new(),
            mean_loss: None,
            error: Some(e.to_string()),
        },
    }
}

/// Evaluates candidates on folds fixed before the sweep. Candidates run in
/// parallel; the best is the lowest mean loss, ties to the earliest.
pub fn evaluate_candidates(
    ds: &Dataset,
    candidates: &[Map<String, Value>],
    factory: &Factory,
    spec: &CvSpec,
) -> Result<TuneResult> {
    if candidates.is_empty() {
        return Err(Error::invalid("no candidates to evaluate"));
    }
    let folds = prepare_folds(ds, spec)?;
    let results = par::map_slice(candidates, |p| evaluate_one(&folds, p, factory, spec));
    let mut best = 0;
    for (i, r) in results.iter().enumerate() {
        let better = match (r.mean_loss, results[best].mean_loss) {
            (Some(a), Some(b)) => a < b,
            (Some(_), None) => true,
            _ => false,
        };
        if better {
            best = i;
        }
    }
    Ok(TuneResult {
        loss: spec.loss,
        k: spec.k,
        candidates: results,
        best,
    })
}

pub fn grid_search(ds: &Dataset, grid: &ParamGrid, factory: &Factory, spec: &CvSpec) -> Result<TuneResult> {
    grid.validate()?;
    evaluate_candidates(ds, &grid.candidates(), factory, spec)
}

pub fn random_search(
    ds: &Dataset,
    grid: &ParamGrid,
    n_samples: usize,
    factory: &Factory,
    spec: &CvSpec,
) -> Result<TuneResult> {
    grid.validate()?;
    evaluate_candidates(ds, &grid.sample(n_samples, spec.seed), factory, spec)
}
