//! Classical learners and the shared classifier contract.

pub mod adaboost;
pub mod forest;
pub mod gbm;
pub mod logistic;
pub mod tree;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::ensemble::{
    fit_bagging, fit_stacking, fit_voting, BaggingConfig, BaggingEnsemble, StackingConfig, StackingEnsemble,
    VotingConfig, VotingEnsemble,
};
use crate::error::{Error, Result};
use crate::neural::{train_ffn, train_kan, FfnConfig, FfnModel, KanConfig, KanModel, TrainLog};
use crate::par;
use crate::rng::Seed;

pub use adaboost::{fit_adaboost, samme_alpha, AdaBoostConfig, AdaBoostModel};
pub use forest::{bootstrap_rows, fit_forest, ForestConfig, RandomForestModel};
pub use gbm::{fit_gbm, GbmConfig, GradientBoostingModel};
pub use logistic::{fit_logistic, LogisticConfig, LogisticRegressionModel};
pub use tree::{fit_tree, DecisionTreeModel, MaxFeatures, TreeConfig};

/// Index of the largest entry; ties go to the lowest index.
/// Index of the first maximum.
pub fn argmax<'a>(v: impl IntoIterator<Item = &'a f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, &x) in v.into_iter().enumerate() {
        if i == 0 || x > best.1 {
            best = (i, x);
        }
    }
    best.0
}

pub fn softmax_in_place(v: &mut [f64]) {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    v.iter_mut().for_each(|x| *x /= s);
}

pub fn softmax_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        match row.as_slice_mut() {
            Some(s) => softmax_in_place(s),
            None => {
                let mut v = row.to_vec();
                softmax_in_place(&mut v);
                row.assign(&ArrayView1::from(&v));
            }
        }
    }
}

/// Mean `-ln p(y_i)` with probabilities floored at `1e-15`.
pub fn cross_entropy(proba: &Array2<f64>, y: &[usize]) -> f64 {
    let n = y.len() as f64;
    y.iter()
        .enumerate()
        .map(|(i, &c)| -proba[[i, c]].max(1e-15).ln())
        .sum::<f64>()
        / n
}

/// Per-feature affine standardisation fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    #[serde(with = "crate::codec::vec")]
    pub mean: Vec<f64>,
    #[serde(with = "crate::codec::vec")]
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Population mean and std; zero-variance columns get scale 1.
    pub fn fit(x: &Array2<f64>) -> Self {
        let n = x.nrows() as f64;
        let mut mean = Vec::with_capacity(x.ncols());
        let mut scale = Vec::with_capacity(x.ncols());
        for col in x.columns() {
            let m = col.sum() / n;
            let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
            mean.push(m);
            scale.push(if var > 0.0 { var.sqrt() } else { 1.0 });
        }
        Standardizer { mean, scale }
    }

    pub fn transform(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = x.clone();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            let (m, s) = (self.mean[j], self.scale[j]);
            col.mapv_inplace(|v| (v - m) / s);
        }
        out
    }
}

/// Probability-output classifier over a fixed number of input features.
pub trait Classifier {
    fn n_features(&self) -> usize;
    fn n_classes(&self) -> usize;

    /// Class probabilities for one row whose length is already checked.
    fn proba_row(&self, x: ArrayView1<f64>) -> Vec<f64>;

    fn check_dim(&self, d: usize) -> Result<()> {
        if d != self.n_features() {
            return Err(Error::DimensionMismatch {
                expected: self.n_features(),
                got: d,
            });
        }
        Ok(())
    }

    fn predict_proba_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x.len())?;
        Ok(self.proba_row(ArrayView1::from(x)))
    }

    fn predict_one(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.predict_proba_one(x)?))
    }

    fn predict_proba(&self, x: &Array2<f64>) -> Result<Array2<f64>>
    where
        Self: Sync,
    {
        self.check_dim(x.ncols())?;
        let rows = par::map_range(x.nrows(), |i| self.proba_row(x.row(i)));
        let k = self.n_classes();
        Ok(Array2::from_shape_fn((x.nrows(), k), |(i, c)| rows[i][c]))
    }

    fn predict(&self, x: &Array2<f64>) -> Result<Vec<usize>>
    where
        Self: Sync,
    {
        let p = self.predict_proba(x)?;
        Ok(p.rows().into_iter().map(argmax).collect())
    }
}

/// Every fitted model the toolkit can produce.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum Model {
    Logistic(LogisticRegressionModel),
    DecisionTree(DecisionTreeModel),
    RandomForest(RandomForestModel),
    Gbm(GradientBoostingModel),
    #[serde(rename = "adaboost")]
    AdaBoost(AdaBoostModel),
    Voting(VotingEnsemble),
    Bagging(BaggingEnsemble),
    Stacking(StackingEnsemble),
    Ffn(FfnModel),
    Kan(KanModel),
}

impl Model {
    pub fn kind(&self) -> &'static str {
        match self {
            Model::Logistic(_) => "logistic",
            Model::DecisionTree(_) => "decision_tree",
            Model::RandomForest(_) => "random_forest",
            Model::Gbm(_) => "gbm",
            Model::AdaBoost(_) => "adaboost",
            Model::Voting(_) => "voting",
            Model::Bagging(_) => "bagging",
            Model::Stacking(_) => "stacking",
            Model::Ffn(_) => "ffn",
            Model::Kan(_) => "kan",
        }
    }
}

impl Classifier for Model {
    fn n_features(&self) -> usize {
        match self {
            Model::Logistic(m) => m.n_features(),
            Model::DecisionTree(m) => m.n_features,
            Model::RandomForest(m) => m.n_features,
            Model::Gbm(m) => m.n_features,
            Model::AdaBoost(m) => m.n_features,
            Model::Voting(m) => m.n_features(),
            Model::Bagging(m) => m.n_features(),
            Model::Stacking(m) => m.n_features(),
            Model::Ffn(m) => m.n_features(),
            Model::Kan(m) => m.n_features(),
        }
    }

    fn n_classes(&self) -> usize {
        match self {
            Model::Logistic(m) => m.n_classes(),
            Model::DecisionTree(m) => m.n_classes,
            Model::RandomForest(m) => m.n_classes,
            Model::Gbm(m) => m.n_classes(),
            Model::AdaBoost(m) => m.n_classes,
            Model::Voting(m) => m.n_classes(),
            Model::Bagging(m) => m.n_classes(),
            Model::Stacking(m) => m.n_classes(),
            Model::Ffn(m) => m.n_classes(),
            Model::Kan(m) => m.n_classes(),
        }
    }

    fn proba_row(&self, x: ArrayView1<f64>) -> Vec<f64> {
        match self {
            Model::Logistic(m) => m.proba_row(x),
            Model::DecisionTree(m) => m.proba_row(x),
            Model::RandomForest(m) => m.proba_row(x),
            Model::Gbm(m) => m.proba_row(x),
            Model::AdaBoost(m) => m.proba_row(x),
            Model::Voting(m) => m.vote_proba_row(x),
            Model::Bagging(m) => m.proba_row(x),
            Model::Stacking(m) => m.proba_row(x),
            Model::Ffn(m) => m.proba_row(x),
            Model::Kan(m) => m.proba_row(x),
        }
    }

    fn predict_proba(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_dim(x.ncols())?;
        match self {
            Model::Logistic(m) => Ok(m.predict_proba_matrix(x)),
            Model::Ffn(m) => Ok(m.predict_proba_matrix(x)),
            Model::Kan(m) => Ok(m.predict_proba_matrix(x)),
            _ => {
                let rows = par::map_range(x.nrows(), |i| self.proba_row(x.row(i)));
                let k = self.n_classes();
                Ok(Array2::from_shape_fn((x.nrows(), k), |(i, c)| rows[i][c]))
            }
        }
    }
}

/// Hyperparameters of any learner; `fit` turns one into a [`Model`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    Logistic(LogisticConfig),
    DecisionTree(TreeConfig),
    RandomForest(ForestConfig),
    Gbm(GbmConfig),
    #[serde(rename = "adaboost")]
    AdaBoost(AdaBoostConfig),
    Voting(VotingConfig),
    Bagging(BaggingConfig),
    Stacking(StackingConfig),
    Ffn(FfnConfig),
    Kan(KanConfig),
}

impl ModelConfig {
    pub fn display_name(&self) -> &'static str {
        match self {
            ModelConfig::Logistic(_) => "Logistic Regression",
            ModelConfig::DecisionTree(_) => "Decision Tree",
            ModelConfig::RandomForest(_) => "Random Forest",
            ModelConfig::Gbm(_) => "GBM",
            ModelConfig::AdaBoost(_) => "AdaBoost",
            ModelConfig::Voting(_) => "Voting Classifier",
            ModelConfig::Bagging(_) => "Bagging Classifier",
            ModelConfig::Stacking(_) => "Stacking Classifier",
            ModelConfig::Ffn(_) => "FFN",
            ModelConfig::Kan(_) => "KAN",
        }
    }

    pub fn is_neural(&self) -> bool {
        matches!(self, ModelConfig::Ffn(_) | ModelConfig::Kan(_))
    }

    pub fn fit(&self, ds: &Dataset, seed: Seed) -> Result<Model> {
        Ok(self.fit_with_eval(ds, None, seed)?.0)
    }

    /// Fit, passing a held-out set to the neural trainers for their
    /// per-epoch test accuracy and early stopping.
    pub fn fit_with_eval(&self, ds: &Dataset, eval: Option<&Dataset>, seed: Seed) -> Result<(Model, Option<TrainLog>)> {
        let seed = seed.derive(self.display_name());
        Ok(match self {
            ModelConfig::Logistic(c) => (Model::Logistic(fit_logistic(ds, c, seed)?), None),
            ModelConfig::DecisionTree(c) => (Model::DecisionTree(fit_tree(ds, c, seed)?), None),
            ModelConfig::RandomForest(c) => (Model::RandomForest(fit_forest(ds, c, seed)?), None),
            ModelConfig::Gbm(c) => (Model::Gbm(fit_gbm(ds, c, seed)?), None),
            ModelConfig::AdaBoost(c) => (Model::AdaBoost(fit_adaboost(ds, c, seed)?), None),
            ModelConfig::Voting(c) => (Model::Voting(fit_voting(ds, c, seed)?), None),
            ModelConfig::Bagging(c) => (Model::Bagging(fit_bagging(ds, c, seed)?), None),
            ModelConfig::Stacking(c) => (Model::Stacking(fit_stacking(ds, c, seed)?), None),
            ModelConfig::Ffn(c) => {
                let (m, log) = train_ffn(ds, eval, c, seed)?;
                (Model::Ffn(m), Some(log))
            }
            ModelConfig::Kan(c) => {
                let (m, log) = train_kan(ds, eval, c, seed)?;
                (Model::Kan(m), Some(log))
            }
        })
    }
}
