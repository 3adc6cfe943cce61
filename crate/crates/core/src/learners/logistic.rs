//! Multinomial logistic regression trained by mini-batch gradient descent on
//! `mean cross-entropy + l2 * ||W||^2`.

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{softmax_rows, Standardizer};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng::Seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogisticConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub l2: f64,
    /// Standardise inputs with training-set mean and std before fitting.
    pub standardize: bool,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig {
            learning_rate: 0.1,
            epochs: 200,
            batch_size: 256,
            l2: 0.0,
            standardize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticRegressionModel {
    /// `n_classes x d`
    #[serde(with = "crate::codec::array2")]
    pub weights: Array2<f64>,
    #[serde(with = "crate::codec::array1")]
    pub biases: Array1<f64>,
    pub l2: f64,
    pub standardizer: Option<Standardizer>,
    /// Full-data training loss before the first epoch and after each epoch.
    #[serde(with = "crate::codec::vec")]
    pub loss_history: Vec<f64>,
}

/// Loss and gradient of `-(1/n) sum log P(y_i | x_i) + l2 * ||W||^2`.
pub fn loss_and_gradient(
    weights: &Array2<f64>,
    biases: &Array1<f64>,
    x: &Array2<f64>,
    y: &[usize],
    l2: f64,
) -> (f64, Array2<f64>, Array1<f64>) {
    let n = x.nrows() as f64;
    let mut p = x.dot(&weights.t()) + biases;
    softmax_rows(&mut p);
    let mut loss = 0.0;
    for (i, &yi) in y.iter().enumerate() {
        loss -= p[[i, yi]].max(f64::MIN_POSITIVE).ln();
        p[[i, yi]] -= 1.0;
    }
    loss = loss / n + l2 * weights.iter().map(|w| w * w).sum::<f64>();
    let gw = p.t().dot(x) / n + &(weights * (2.0 * l2));
    let gb = p.sum_axis(Axis(0)) / n;
    (loss, gw, gb)
}

pub fn fit_logistic(ds: &Dataset, config: &LogisticConfig, seed: Seed) -> Result<LogisticRegressionModel> {
    let present = ds.class_counts().iter().filter(|&&c| c > 0).count();
    if present < 2 {
        return Err(Error::invalid("logistic regression needs at least two classes present"));
    }
    if config.batch_size == 0 {
        return Err(Error::invalid("batch_size must be at least 1"));
    }
    let standardizer = config.standardize.then(|| Standardizer::fit(ds.features()));
    let x = match &standardizer {
        Some(s) => s.transform(ds.features()),
        None => ds.features().clone(),
    };
    let y = ds.labels();
    let (c, d) = (ds.n_classes(), ds.d());
    let mut w = Array2::<f64>::zeros((c, d));
    let mut b = Array1::<f64>::zeros(c);
    let mut history = vec![loss_and_gradient(&w, &b, &x, y, config.l2).0];
    let mut rng = seed.derive("logistic").rng();
    let mut order: Vec<usize> = (0..ds.n()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let xb = x.select(Axis(0), chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| y[i]).collect();
            let (_, gw, gb) = loss_and_gradient(&w, &b, &xb, &yb, config.l2);
            w.scaled_add(-config.learning_rate, &gw);
            b.scaled_add(-config.learning_rate, &gb);
        }
        let loss = loss_and_gradient(&w, &b, &x, y, config.l2).0;
        if !loss.is_finite() {
            return Err(Error::Divergence {
                epoch: epoch + 1,
                message: format!("training loss became {loss}"),
            });
        }
        history.push(loss);
    }
    Ok(LogisticRegressionModel {
        weights: w,
        biases: b,
        l2: config.l2,
        standardizer,
        loss_history: history,
    })
}

impl LogisticRegressionModel {
    pub fn n_features(&self) -> usize {
        self.weights.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn predict_proba_matrix(&self, x: &Array2<f64>) -> Array2<f64> {
        let xs = match &self.standardizer {
            Some(s) => s.transform(x),
            None => x.clone(),
        };
        let mut p = xs.dot(&self.weights.t()) + &self.biases;
        softmax_rows(&mut p);
        p
    }

    pub fn proba_row(&self, x: ArrayView1<f64>) -> Vec<f64> {
        let m = x.to_owned().insert_axis(Axis(0));
        self.predict_proba_matrix(&m).slice(s![0, ..]).to_vec()
    }
}
