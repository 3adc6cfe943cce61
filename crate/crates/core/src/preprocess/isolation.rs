use ndarray::ArrayView1;
use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::par;
use crate::rng::{Rng, Seed};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Average path length of an unsuccessful search in a binary search tree
/// built from `n` points; normalises isolation depths.
pub fn average_path_length(n: usize) -> f64 {
    match n {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => {
            let m = (n - 1) as f64;
            2.0 * (m.ln() + EULER_GAMMA) - 2.0 * m / n as f64
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IsolationConfig {
    pub n_trees: usize,
    /// `None` means `min(256, n)`.
    pub subsample: Option<usize>,
    pub contamination: f64,
}

impl Default for IsolationConfig {
    fn default() -> Self {
        IsolationConfig {
            n_trees: 100,
            subsample: None,
            contamination: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum IsolationNode {
    /// Rows with `x[feature] <= split` go left.
    Internal {
        feature: usize,
        split: f64,
        left: usize,
        right: usize,
    },
    Leaf { depth: usize, size: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsolationTree {
    pub nodes: Vec<IsolationNode>,
}

impl IsolationTree {
    fn grow(ds: &Dataset, rows: Vec<usize>, height_limit: usize, rng: &mut Rng) -> Self {
        let mut tree = IsolationTree { nodes: Vec::new() };
        tree.build(ds, rows, 0, height_limit, rng);
        tree
    }

    fn build(&mut self, ds: &Dataset, rows: Vec<usize>, depth: usize, limit: usize, rng: &mut Rng) -> usize {
        let id = self.nodes.len();
        self.nodes.push(IsolationNode::Leaf { depth, size: rows.len() });
        if depth >= limit || rows.len() <= 1 {
            return id;
        }
        let x = ds.features();
        // features that still vary inside this node
        let mut ranges = Vec::new();
        for j in 0..ds.d() {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &i in &rows {
                lo = lo.min(x[[i, j]]);
                hi = hi.max(x[[i, j]]);
            }
            if lo < hi {
                ranges.push((j, lo, hi));
            }
        }
        if ranges.is_empty() {
            return id;
        }
        let (feature, lo, hi) = ranges[rng.random_range(0..ranges.len())];
        let split = rng.random_range(lo..hi);
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
            rows.into_iter().partition(|&i| x[[i, feature]] <= split);
        let left = self.build(ds, left_rows, depth + 1, limit, rng);
        let right = self.build(ds, right_rows, depth + 1, limit, rng);
        self.nodes[id] = IsolationNode::Internal {
            feature,
            split,
            left,
            right,
        };
        id
    }

    /// Depth of the leaf reached by `x`, adjusted by `c(leaf size)`.
    pub fn path_length(&self, x: ArrayView1<f64>) -> f64 {
        let mut id = 0;
        loop {
            match self.nodes[id] {
                IsolationNode::Internal {
                    feature,
                    split,
                    left,
                    right,
                } => id = if x[feature] <= split { left } else { right },
                IsolationNode::Leaf { depth, size } => {
                    return depth as f64 + average_path_length(size)
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                IsolationNode::Leaf { depth, .. } => Some(*depth),
                _ => None,
            })
            .max()
            .unwrap_or(0)
    }

    pub fn n_internal(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, IsolationNode::Internal { .. }))
            .count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsolationForestModel {
    pub trees: Vec<IsolationTree>,
    pub subsample_size: usize,
    pub n_trees: usize,
    pub contamination: f64,
    pub n_features: usize,
}

pub fn fit_isolation_forest(ds: &Dataset, config: &IsolationConfig, seed: Seed) -> Result<IsolationForestModel> {
    let n = ds.n();
    let psi = config.subsample.unwrap_or_else(|| n.min(256));
    if config.n_trees == 0 {
        return Err(Error::invalid("isolation forest needs at least one tree"));
    }
    if psi < 2 || psi > n {
        return Err(Error::invalid(format!(
            "subsample size {psi} must lie in 2..={n}"
        )));
    }
    if !(config.contamination > 0.0 && config.contamination < 0.5) {
        return Err(Error::invalid(format!(
            "contamination {} not in (0, 0.5)",
            config.contamination
        )));
    }
    let height_limit = (psi as f64).log2().ceil() as usize;
    let base = seed.derive("isolation_forest");
    let trees = par::map_range(config.n_trees, |t| {
        let mut rng = base.child(t as u64).rng();
        let mut rows = index::sample(&mut rng, n, psi).into_vec();
        rows.sort_unstable();
        IsolationTree::grow(ds, rows, height_limit, &mut rng)
    });
    Ok(IsolationForestModel {
        trees,
        subsample_size: psi,
        n_trees: config.n_trees,
        contamination: config.contamination,
        n_features: ds.d(),
    })
}

/// `s(x) = 2^(-E[h(x)] / c(psi))`; higher is more anomalous.
pub fn anomaly_scores(model: &IsolationForestModel, ds: &Dataset) -> Result<Vec<f64>> {
    if ds.d() != model.n_features {
        return Err(Error::DimensionMismatch {
            expected: model.n_features,
            got: ds.d(),
        });
    }
    let c = average_path_length(model.subsample_size);
    let x = ds.features();
    Ok(par::map_range(ds.n(), |i| {
        let row = x.row(i);
        let mean = model.trees.iter().map(|t| t.path_length(row)).sum::<f64>() / model.trees.len() as f64;
        2f64.powf(-mean / c)
    }))
}

/// Drop the `floor(contamination * n)` highest-scoring rows. Among equal
/// scores the later row is dropped first.
pub fn filter_anomalies(ds: &Dataset, model: &IsolationForestModel, contamination: f64) -> Result<Dataset> {
    if !(contamination > 0.0 && contamination < 0.5) {
        return Err(Error::invalid(format!("contamination {contamination} not in (0, 0.5)")));
    }
    let scores = anomaly_scores(model, ds)?;
    let n = ds.n();
    let n_drop = (contamination * n as f64).floor() as usize;
    if n_drop >= n {
        return Err(Error::invalid("anomaly filtering would remove every row"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(b.cmp(&a)));
    let mut dropped = vec![false; n];
    for &i in &order[..n_drop] {
        dropped[i] = true;
    }
    let keep: Vec<usize> = (0..n).filter(|&i| !dropped[i]).collect();
    Ok(ds.select_rows(&keep))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;

    fn line(points: &[f64]) -> Dataset {
        let x = Array2::from_shape_fn((points.len(), 1), |(i, _)| points[i]);
        Dataset::from_arrays(x, vec![0; points.len()], 1).unwrap()
    }

    fn cfg(n_trees: usize, subsample: usize) -> IsolationConfig {
        IsolationConfig {
            n_trees,
            subsample: Some(subsample),
            contamination: 0.25,
        }
    }

    #[test]
    fn path_length_normaliser() {
        assert_eq!(average_path_length(1), 0.0);
        assert_eq!(average_path_length(2), 1.0);
        let c256 = average_path_length(256);
        assert!((c256 - 10.244_770_920_447_064).abs() < 1e-9, "{c256}");
    }

    #[test]
    fn score_formula_identities() {
        let c = average_path_length(64);
        assert_eq!(2f64.powf(-c / c), 0.5);
        assert!(2f64.powf(-1e-12 / c) > 0.999_999);
    }

    #[test]
    fn two_point_subsample_gives_single_split() {
        let ds = line(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        let m = fit_isolation_forest(&ds, &cfg(20, 2), Seed(4)).unwrap();
        for t in &m.trees {
            assert_eq!(t.n_internal(), 1);
            assert!(t.depth() <= 1);
        }
    }

    #[test]
    fn depth_is_capped_and_fit_is_deterministic() {
        let pts: Vec<f64> = (0..200).map(|i| ((i * 37) % 101) as f64).collect();
        let ds = line(&pts);
        let a = fit_isolation_forest(&ds, &cfg(30, 64), Seed(5)).unwrap();
        let b = fit_isolation_forest(&ds, &cfg(30, 64), Seed(5)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.trees.len(), 30);
        for t in &a.trees {
            assert!(t.depth() <= 6);
        }
        let seq = par::sequential(|| fit_isolation_forest(&ds, &cfg(30, 64), Seed(5)).unwrap());
        assert_eq!(a, seq);
    }

    #[test]
    fn planted_outlier_scores_highest_and_is_dropped() {
        let ds = line(&[0.0, 0.1, 0.2, 10.0]);
        let m = fit_isolation_forest(&ds, &cfg(200, 4), Seed(11)).unwrap();
        let s = anomaly_scores(&m, &ds).unwrap();
        assert!(s.iter().all(|&v| v > 0.0 && v < 1.0));
        assert!(s[3] > s[0] && s[3] > s[1] && s[3] > s[2], "{s:?}");
        let kept = filter_anomalies(&ds, &m, 0.25).unwrap();
        assert_eq!(kept.features().column(0).to_vec(), vec![0.0, 0.1, 0.2]);
    }

    #[test]
    fn brute_force_expected_depth_agrees() {
        // Independent check: average isolation depth of each point over many
        // random single-tree fits. The outlier must isolate earliest.
        let ds = line(&[0.0, 0.1, 0.2, 10.0]);
        let mut depth = [0.0; 4];
        for s in 0..500 {
            let m = fit_isolation_forest(&ds, &cfg(1, 4), Seed(s)).unwrap();
            for (i, d) in depth.iter_mut().enumerate() {
                *d += m.trees[0].path_length(ds.row(i));
            }
        }
        assert!(depth[3] < depth[0] && depth[3] < depth[1] && depth[3] < depth[2]);
    }

    #[test]
    fn filter_row_counts() {
        let pts: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let ds = line(&pts);
        let m = fit_isolation_forest(&ds, &cfg(50, 64), Seed(2)).unwrap();
        assert_eq!(filter_anomalies(&ds, &m, 0.05).unwrap().n(), 95);
        assert_eq!(filter_anomalies(&ds, &m, 0.009).unwrap(), ds);
        assert!(filter_anomalies(&ds, &m, 0.6).is_err());
    }

    #[test]
    fn errors() {
        let ds = line(&[0.0, 1.0, 2.0]);
        assert!(fit_isolation_forest(&ds, &cfg(10, 4), Seed(0)).is_err());
        assert!(fit_isolation_forest(&ds, &cfg(0, 2), Seed(0)).is_err());
        let m = fit_isolation_forest(&ds, &cfg(10, 2), Seed(0)).unwrap();
        let wide = Dataset::from_arrays(Array2::zeros((2, 3)), vec![0, 0], 1).unwrap();
        assert!(matches!(anomaly_scores(&m, &wide), Err(Error::DimensionMismatch { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn scores_are_permutation_invariant(pts in proptest::collection::vec(-50.0f64..50.0, 8..40), rot in 1usize..7) {
            let ds = line(&pts);
            let m = fit_isolation_forest(&ds, &cfg(25, 8), Seed(1)).unwrap();
            let s = anomaly_scores(&m, &ds).unwrap();
            let perm: Vec<usize> = (0..pts.len()).map(|i| (i + rot) % pts.len()).collect();
            let s2 = anomaly_scores(&m, &ds.select_rows(&perm)).unwrap();
            for (k, &i) in perm.iter().enumerate() {
                prop_assert_eq!(s2[k].to_bits(), s[i].to_bits());
            }
        }
    }
}
