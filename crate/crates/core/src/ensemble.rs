//! Voting, bagging and stacking combinators over [`Model`]s.

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::learners::{
    argmax, bootstrap_rows, Classifier, ForestConfig, GbmConfig, LogisticConfig, Model, ModelConfig, TreeConfig,
};
use crate::par;
use crate::rng::Seed;
use crate::tune::{k_fold_split, CvSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteMode {
    #[default]
    Soft,
    Hard,
}

/// Base learners shared by the default voting and stacking ensembles.
pub fn default_roster() -> Vec<ModelConfig> {
    vec![
        ModelConfig::RandomForest(ForestConfig::default()),
        ModelConfig::Gbm(GbmConfig::default()),
        ModelConfig::Logistic(LogisticConfig::default()),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VotingConfig {
    pub members: Vec<ModelConfig>,
    /// Unit weights when absent.
    pub weights: Option<Vec<f64>>,
    pub mode: VoteMode,
}

impl Default for VotingConfig {
    fn default() -> Self {
        VotingConfig {
            members: default_roster(),
            weights: None,
            mode: VoteMode::Soft,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VotingEnsemble {
    pub members: Vec<Model>,
    pub weights: Vec<f64>,
    pub mode: VoteMode,
}

impl VotingEnsemble {
    pub fn new(members: Vec<Model>, weights: Vec<f64>, mode: VoteMode) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::invalid("voting needs at least one member"));
        }
        if weights.len() != members.len() {
            return Err(Error::invalid(format!(
                "{} weights for {} members",
                weights.len(),
                members.len()
            )));
        }
        if weights.iter().any(|&w| !w.is_finite() || w < 0.0) {
            return Err(Error::invalid("voting weights must be finite and non-negative"));
        }
        if weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::invalid("voting weights are all zero"));
        }
        let d = members[0].n_features();
        if members.iter().any(|m| m.n_features() != d) {
            return Err(Error::invalid("voting members disagree on input dimension"));
        }
        Ok(VotingEnsemble { members, weights, mode })
    }

    pub fn n_features(&self) -> usize {
        self.members[0].n_features()
    }

    pub fn n_classes(&self) -> usize {
        self.members[0].n_classes()
    }

    /// Combined scores normalised by the weight total.
    pub fn vote_proba_row(&self, x: ArrayView1<f64>) -> Vec<f64> {
        let mut acc = vec![0.0; self.n_classes()];
        for (m, &w) in self.members.iter().zip(&self.weights) {
            let p = m.proba_row(x);
            match self.mode {
                VoteMode::Soft => {
                    for (a, v) in acc.iter_mut().zip(&p) {
                        *a += w * v;
                    }
                }
                VoteMode::Hard => acc[argmax(&p)] += w,
            }
        }
        let total: f64 = self.weights.iter().sum();
        acc.iter_mut().for_each(|a| *a /= total);
        acc
    }

    pub fn vote_predict_row(&self, x: ArrayView1<f64>) -> usize {
        argmax(&self.vote_proba_row(x))
    }
}

pub fn fit_voting(ds: &Dataset, config: &VotingConfig, seed: Seed) -> Result<VotingEnsemble> {
    let weights = config
        .weights
        .clone()
        .unwrap_or_else(|| vec![1.0; config.members.len()]);
    let base = seed.derive("voting");
    let members = par::try_map_range(config.members.len(), |m| config.members[m].fit(ds, base.child(m as u64)))?;
    VotingEnsemble::new(members, weights, config.mode)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaggingConfig {
    pub base: Box<ModelConfig>,
    pub n_estimators: usize,
    /// When false every member sees the full training set.
    pub bootstrap: bool,
}

impl Default for BaggingConfig {
    fn default() -> Self {
        BaggingConfig {
            base: Box::new(ModelConfig::DecisionTree(TreeConfig::default())),
            n_estimators: 10,
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaggingEnsemble {
    pub members: Vec<Model>,
}

impl BaggingEnsemble {
    pub fn n_features(&self) -> usize {
        self.members[0].n_features()
    }

    pub fn n_classes(&self) -> usize {
        self.members[0].n_classes()
    }

    /// `(1/M) sum_m P_m(c | x)`.
    pub fn proba_row(&self, x: ArrayView1<f64>) -> Vec<f64> {
        let mut acc = vec![0.0; self.n_classes()];
        for m in &self.members {
            for (a, v) in acc.iter_mut().zip(m.proba_row(x)) {
                *a += v;
            }
        }
        let m = self.members.len() as f64;
        acc.iter_mut().for_each(|a| *a /= m);
        acc
    }
}

/// Bag `base` over explicit row samples (one per member).
pub fn fit_bagging_with_samples(
    ds: &Dataset,
    base: &ModelConfig,
    samples: &[Vec<usize>],
    seed: Seed,
) -> Result<BaggingEnsemble> {
    if samples.is_empty() {
        return Err(Error::invalid("bagging needs at least one member"));
    }
    let members = par::try_map_range(samples.len(), |m| {
        base.fit(&ds.select_rows(&samples[m]), seed.child(m as u64))
    })?;
    Ok(BaggingEnsemble { members })
}

pub fn fit_bagging(ds: &Dataset, config: &BaggingConfig, seed: Seed) -> Result<BaggingEnsemble> {
    if config.n_estimators == 0 {
        return Err(Error::invalid("bagging needs at least one member"));
    }
    let seed = seed.derive("bagging");
    let samples: Vec<Vec<usize>> = (0..config.n_estimators)
        .map(|m| {
            if config.bootstrap {
                bootstrap_rows(ds.n(), seed.derive("bootstrap").child(m as u64))
            } else {
                (0..ds.n()).collect()
            }
        })
        .collect();
    fit_bagging_with_samples(ds, &config.base, &samples, seed.derive("members"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StackingConfig {
    pub bases: Vec<ModelConfig>,
    pub meta: Box<ModelConfig>,
    pub folds: usize,
}

impl Default for StackingConfig {
    fn default() -> Self {
        StackingConfig {
            bases: default_roster(),
            meta: Box::new(ModelConfig::Logistic(LogisticConfig::default())),
            folds: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackingEnsemble {
    pub bases: Vec<Model>,
    pub meta: Box<Model>,
}

/// Bookkeeping from fitting a stacking ensemble.
#[derive(Debug, Clone)]
pub struct OofTrace {
    /// Fold whose model produced each row's meta features.
    pub fold_of_row: Vec<usize>,
    /// Training rows of each fold's base models.
    pub fold_train_rows: Vec<Vec<usize>>,
    /// `n x (C * M)` out-of-fold meta features.
    pub meta_features: Array2<f64>,
}

impl StackingEnsemble {
    pub fn n_features(&self) -> usize {
        self.bases[0].n_features()
    }

    pub fn n_classes(&self) -> usize {
        self.meta.n_classes()
    }

    /// Concatenated base probabilities, `C` columns per base model.
    pub fn meta_features_row(&self, x: ArrayView1<f64>) -> Vec<f64> {
        self.bases.iter().flat_map(|b| b.proba_row(x)).collect()
    }

    pub fn proba_row(&self, x: ArrayView1<f64>) -> Vec<f64> {
        let z = self.meta_features_row(x);
        self.meta.proba_row(ArrayView1::from(&z))
    }
}

pub fn fit_stacking(ds: &Dataset, config: &StackingConfig, seed: Seed) -> Result<StackingEnsemble> {
    Ok(fit_stacking_traced(ds, config, seed)?.0)
}

pub fn fit_stacking_traced(ds: &Dataset, config: &StackingConfig, seed: Seed) -> Result<(StackingEnsemble, OofTrace)> {
    if config.folds < 2 {
        return Err(Error::invalid("stacking needs at least 2 folds"));
    }
    if config.bases.is_empty() {
        return Err(Error::invalid("stacking needs at least one base model"));
    }
    let seed = seed.derive("stacking");
    let spec = CvSpec {
        k: config.folds,
        stratified: true,
        seed: seed.derive("folds"),
        ..Default::default()
    };
    let folds = k_fold_split(ds, &spec)?;
    for (f, fold) in folds.iter().enumerate() {
        let counts = ds.select_rows(&fold.train).class_counts();
        if let Some(c) = (0..ds.n_classes()).find(|&c| counts[c] == 0 && ds.class_counts()[c] > 0) {
            return Err(Error::Stratification(format!("fold {f} training portion lacks class {c}")));
        }
    }
    let m_count = config.bases.len();
    let k = ds.n_classes();
    let oof_models = par::try_map_range(folds.len() * m_count, |job| {
        let (f, m) = (job / m_count, job % m_count);
        config.bases[m].fit(&ds.select_rows(&folds[f].train), seed.derive("oof").child(f as u64).child(m as u64))
    })?;
    let mut meta_features = Array2::<f64>::zeros((ds.n(), k * m_count));
    let mut fold_of_row = vec![usize::MAX; ds.n()];
    for (f, fold) in folds.iter().enumerate() {
        let xv = ds.select_rows(&fold.validation);
        for m in 0..m_count {
            let p = oof_models[f * m_count + m].predict_proba(xv.features())?;
            for (r, &row) in fold.validation.iter().enumerate() {
                for c in 0..k {
                    meta_features[[row, m * k + c]] = p[[r, c]];
                }
                fold_of_row[row] = f;
            }
        }
    }
    let bases = par::try_map_range(m_count, |m| config.bases[m].fit(ds, seed.derive("base").child(m as u64)))?;
    let meta_ds = Dataset::from_arrays(meta_features.clone(), ds.labels().to_vec(), k)?;
    let meta = config.meta.fit(&meta_ds, seed.derive("meta"))?;
    let trace = OofTrace {
        fold_of_row,
        fold_train_rows: folds.into_iter().map(|f| f.train).collect(),
        meta_features,
    };
    Ok((
        StackingEnsemble {
            bases,
            meta: Box::new(meta),
        },
        trace,
    ))
}
