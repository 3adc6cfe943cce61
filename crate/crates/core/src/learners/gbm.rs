//! Multinomial gradient boosting: each round fits one squared-error
//! regression tree per class to the softmax residuals `1(y = c) - p_c`, with
//! a single Newton step for leaf values.

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use super::tree::{presort, RegressionTree};
use super::{cross_entropy, softmax_in_place};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::par;
use crate::rng::Seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbmConfig {
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_samples_split: usize,
}

impl Default for GbmConfig {
    fn default() -> Self {
        GbmConfig {
            n_rounds: 100,
            learning_rate: 0.1,
            max_depth: 3,
            min_samples_split: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientBoostingModel {
    /// `rounds[t][c]` is the tree for class `c` in round `t`.
    pub rounds: Vec<Vec<RegressionTree>>,
    #[serde(with = "crate::codec::vec")]
    pub init: Vec<f64>,
    pub learning_rate: f64,
    pub n_features: usize,
    /// Training cross-entropy before boosting and after each round.
    #[serde(with = "crate::codec::vec")]
    pub loss_history: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

const PRIOR_FLOOR: f64 = 1e-12;

pub fn fit_gbm(ds: &Dataset, config: &GbmConfig, _seed: Seed) -> Result<GradientBoostingModel> {
    let n = ds.n();
    let k = ds.n_classes();
    if n < 2 {
        return Err(Error::invalid("gradient boosting needs at least 2 rows"));
    }
    if ds.class_counts().iter().filter(|&&c| c > 0).count() < 2 {
        return Err(Error::invalid("gradient boosting needs at least two classes present"));
    }
    let x = ds.features();
    let y = ds.labels();
    let init: Vec<f64> = ds
        .class_counts()
        .iter()
        .map(|&c| (c as f64 / n as f64).max(PRIOR_FLOOR).ln())
        .collect();
    let mut scores = Array2::<f64>::from_shape_fn((n, k), |(_, c)| init[c]);
    let proba = |scores: &Array2<f64>| {
        let mut p = scores.clone();
        for mut row in p.rows_mut() {
            softmax_in_place(row.as_slice_mut().expect("standard layout"));
        }
        p
    };
    let mut p = proba(&scores);
    let mut history = vec![cross_entropy(&p, y)];
    let mut warnings = Vec::new();
    let mut rounds = Vec::with_capacity(config.n_rounds);
    let all_rows: Vec<usize> = (0..n).collect();
    let order = presort(x);
    let kf = k as f64;
    for round in 0..config.n_rounds {
        let trees = par::map_range(k, |c| {
            let residual: Vec<f64> = (0..n)
                .map(|i| f64::from(u8::from(y[i] == c)) - p[[i, c]])
                .collect();
            let leaf = |rows: &[usize]| {
                let num: f64 = rows.iter().map(|&i| residual[i]).sum();
                let den: f64 = rows
                    .iter()
                    .map(|&i| residual[i].abs() * (1.0 - residual[i].abs()))
                    .sum();
                if den.abs() < 1e-150 {
                    0.0
                } else {
                    (kf - 1.0) / kf * num / den
                }
            };
            RegressionTree::fit_sorted(x, &order, &residual, all_rows.clone(), config.max_depth, config.min_samples_split, &leaf)
        });
        for i in 0..n {
            for (c, tree) in trees.iter().enumerate() {
                scores[[i, c]] += config.learning_rate * tree.predict_row(x.row(i));
            }
        }
        p = proba(&scores);
        let loss = cross_entropy(&p, y);
        if !loss.is_finite() {
            return Err(Error::Divergence {
                epoch: round + 1,
                message: format!("boosting loss became {loss}"),
            });
        }
        history.push(loss);
        rounds.push(trees);
        if history.len() > 5 {
            let t = history.len() - 1;
            let rising = (t - 4..=t).all(|s| history[s] > history[s - 1]);
            if rising && history[t] > 1.1 * history[t - 5] {
                warnings.push(format!(
                    "round {}: loss rose more than 10% over 5 consecutive rounds",
                    round + 1
                ));
            }
        }
    }
    Ok(GradientBoostingModel {
        rounds,
        init,
        learning_rate: config.learning_rate,
        n_features: ds.d(),
        loss_history: history,
        warnings,
    })
}

impl GradientBoostingModel {
    pub fn n_classes(&self) -> usize {
        self.init.len()
    }

    pub fn scores_row(&self, x: ArrayView1<f64>) -> Vec<f64> {
        let mut s = self.init.clone();
        for trees in &self.rounds {
            for (c, t) in trees.iter().enumerate() {
                s[c] += self.learning_rate * t.predict_row(x);
            }
        }
        s
    }

    pub fn proba_row(&self, x: ArrayView1<f64>) -> Vec<f64> {
        let mut s = self.scores_row(x);
        softmax_in_place(&mut s);
        s
    }
}
