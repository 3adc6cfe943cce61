use ndarray::ArrayView1;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::tree::{grow_classifier, DecisionTreeModel, MaxFeatures, TreeConfig};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::par;
use crate::rng::Seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub max_features: MaxFeatures,
    pub bootstrap: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            max_depth: 12,
            min_samples_split: 2,
            max_features: MaxFeatures::Sqrt,
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForestModel {
    pub trees: Vec<DecisionTreeModel>,
    pub n_features: usize,
    pub n_classes: usize,
}

/// Row indices of a bootstrap sample: `n` draws with replacement.
pub fn bootstrap_rows(n: usize, seed: Seed) -> Vec<usize> {
    let mut rng = seed.rng();
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

pub fn fit_forest(ds: &Dataset, config: &ForestConfig, seed: Seed) -> Result<RandomForestModel> {
    if ds.n() < 2 {
        return Err(Error::invalid("random forest needs at least 2 rows"));
    }
    if config.n_trees == 0 {
        return Err(Error::invalid("random forest needs at least one tree"));
    }
    let tree_cfg = TreeConfig {
        max_depth: config.max_depth,
        min_samples_split: config.min_samples_split,
        max_features: config.max_features,
    };
    let base = seed.derive("forest");
    let trees = par::try_map_range(config.n_trees, |t| {
        let tree_seed = base.child(t as u64);
        let rows = if config.bootstrap {
            bootstrap_rows(ds.n(), tree_seed.derive("bootstrap"))
        } else {
            (0..ds.n()).collect()
        };
        grow_classifier(
            ds.features(),
            ds.labels(),
            ds.n_classes(),
            rows,
            None,
            &tree_cfg,
            Some(tree_seed.derive("features")),
        )
    })?;
    Ok(RandomForestModel {
        trees,
        n_features: ds.d(),
        n_classes: ds.n_classes(),
    })
}

impl RandomForestModel {
    pub fn proba_row(&self, x: ArrayView1<f64>) -> Vec<f64> {
        let mut acc = vec![0.0; self.n_classes];
        for t in &self.trees {
            for (a, p) in acc.iter_mut().zip(t.proba_row(x)) {
                *a += p;
            }
        }
        let m = self.trees.len() as f64;
        acc.iter_mut().for_each(|a| *a /= m);
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::tree::fit_tree;
    use crate::synthetic::gaussian_blobs;

    #[test]
    fn single_full_tree_matches_cart() {
        let data = gaussian_blobs(&[30, 30, 30], 4, 1.0, Seed(2));
        let cfg = ForestConfig {
            n_trees: 1,
            bootstrap: false,
            max_features: MaxFeatures::All,
            ..Default::default()
        };
        let f = fit_forest(&data, &cfg, Seed(9)).unwrap();
        let t = fit_tree(&data, &TreeConfig::default(), Seed(0)).unwrap();
        for i in 0..data.n() {
            assert_eq!(f.proba_row(data.row(i)), t.proba_row(data.row(i)));
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let data = gaussian_blobs(&[30, 20, 10], 5, 1.0, Seed(2));
        let cfg = ForestConfig { n_trees: 10, ..Default::default() };
        let a = fit_forest(&data, &cfg, Seed(4)).unwrap();
        assert_eq!(a, fit_forest(&data, &cfg, Seed(4)).unwrap());
        assert_eq!(a, par::sequential(|| fit_forest(&data, &cfg, Seed(4)).unwrap()));
        assert_ne!(a, fit_forest(&data, &cfg, Seed(5)).unwrap());
    }

    #[test]
    fn bootstrap_has_n_rows() {
        for n in [1, 7, 100] {
            let rows = bootstrap_rows(n, Seed(n as u64));
            assert_eq!(rows.len(), n);
            assert!(rows.iter().all(|&r| r < n));
        }
    }
}
