//! SAMME multi-class AdaBoost over shallow CART trees.

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use super::argmax;
use super::tree::{grow_classifier, DecisionTreeModel, TreeConfig};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng::Seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaBoostConfig {
    pub n_estimators: usize,
    /// Weak-learner depth, 1 to 3.
    pub max_depth: usize,
}

impl Default for AdaBoostConfig {
    fn default() -> Self {
        AdaBoostConfig {
            n_estimators: 50,
            max_depth: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaBoostModel {
    pub learners: Vec<DecisionTreeModel>,
    pub alphas: Vec<f64>,
    pub n_features: usize,
    pub n_classes: usize,
}

/// `ln((1 - err) / err) + ln(C - 1)`.
pub fn samme_alpha(err: f64, n_classes: usize) -> f64 {
    ((1.0 - err) / err).ln() + ((n_classes - 1) as f64).ln()
}

pub fn fit_adaboost(ds: &Dataset, config: &AdaBoostConfig, _seed: Seed) -> Result<AdaBoostModel> {
    let n = ds.n();
    if n < 2 {
        return Err(Error::invalid("AdaBoost needs at least 2 rows"));
    }
    if !(1..=3).contains(&config.max_depth) {
        return Err(Error::invalid("AdaBoost weak learners must have depth 1 to 3"));
    }
    let k = ds.n_classes();
    let floor = 1.0 - 1.0 / k as f64;
    let tree_cfg = TreeConfig {
        max_depth: config.max_depth,
        ..Default::default()
    };
    let y = ds.labels();
    let mut w = vec![1.0 / n as f64; n];
    let mut learners = Vec::new();
    let mut alphas = Vec::new();
    for _ in 0..config.n_estimators {
        let tree = grow_classifier(ds.features(), y, k, (0..n).collect(), Some(&w), &tree_cfg, None)?;
        let wrong: Vec<bool> = (0..n).map(|i| argmax(&tree.proba_row(ds.row(i))) != y[i]).collect();
        let total: f64 = w.iter().sum();
        let err = w.iter().zip(&wrong).filter(|(_, &m)| m).map(|(wi, _)| wi).sum::<f64>() / total;
        if err <= 0.0 {
            // a perfect learner decides alone
            if learners.is_empty() {
                learners.push(tree);
                alphas.push(1.0);
            }
            break;
        }
        if err >= floor {
            if learners.is_empty() {
                learners.push(tree);
                alphas.push(1.0);
            }
            break;
        }
        let alpha = samme_alpha(err, k);
        for (wi, &m) in w.iter_mut().zip(&wrong) {
            if m {
                *wi *= alpha.exp();
            }
        }
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|wi| *wi /= s);
        learners.push(tree);
        alphas.push(alpha);
    }
    Ok(AdaBoostModel {
        learners,
        alphas,
        n_features: ds.d(),
        n_classes: k,
    })
}

impl AdaBoostModel {
    /// Alpha-weighted vote shares; argmax is the SAMME decision.
    pub fn proba_row(&self, x: ArrayView1<f64>) -> Vec<f64> {
        let mut votes = vec![0.0; self.n_classes];
        for (t, &a) in self.learners.iter().zip(&self.alphas) {
            votes[argmax(&t.proba_row(x))] += a;
        }
        let total: f64 = votes.iter().sum();
        votes.iter_mut().for_each(|v| *v /= total);
        votes
    }
}
