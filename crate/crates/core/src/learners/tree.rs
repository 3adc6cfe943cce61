//! CART trees: Gini classification trees and squared-error regression trees.

use ndarray::{Array2, ArrayView1};
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng::{Rng, Seed};

/// Features considered at each split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    #[default]
    All,
    /// `ceil(sqrt(d))`
    Sqrt,
    #[serde(untagged)]
    Count(usize),
}

impl MaxFeatures {
    pub fn resolve(self, d: usize) -> usize {
        match self {
            MaxFeatures::All => d,
            MaxFeatures::Sqrt => ((d as f64).sqrt().ceil() as usize).clamp(1, d),
            MaxFeatures::Count(k) => k.clamp(1, d),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeConfig {
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub max_features: MaxFeatures,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig {
            max_depth: 12,
            min_samples_split: 2,
            max_features: MaxFeatures::All,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum TreeNode {
    /// `x[feature] <= threshold` goes left.
    Split {
        feature: usize,
        threshold: f64,
        gain: f64,
        left: usize,
        right: usize,
    },
    Leaf { counts: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTreeModel {
    pub nodes: Vec<TreeNode>,
    pub n_features: usize,
    pub n_classes: usize,
}

/// Gini impurity `1 - sum p_c^2` of weighted class counts.
pub fn gini(counts: &[f64], total: f64) -> f64 {
    if total <= 0.0 {
        return 0.0;
    }
    let mut s = 0.0;
    for &c in counts {
        let p = c / total;
        s += p * p;
    }
    1.0 - s
}

/// Midpoint between consecutive distinct sorted values, nudged down when
/// rounding would put it on the upper value.
fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = lo + (hi - lo) / 2.0;
    if m >= hi {
        lo
    } else {
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitChoice {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

struct ClassBuilder<'a> {
    x: &'a Array2<f64>,
    y: &'a [usize],
    w: Option<&'a [f64]>,
    n_classes: usize,
    config: &'a TreeConfig,
    rng: Option<Rng>,
    nodes: Vec<TreeNode>,
}

impl ClassBuilder<'_> {
    fn weight(&self, i: usize) -> f64 {
        self.w.map_or(1.0, |w| w[i])
    }

    fn counts(&self, rows: &[usize]) -> Vec<f64> {
        let mut c = vec![0.0; self.n_classes];
        for &i in rows {
            c[self.y[i]] += self.weight(i);
        }
        c
    }

    fn candidate_features(&mut self) -> Vec<usize> {
        let d = self.x.ncols();
        let m = self.config.max_features.resolve(d);
        match self.rng.as_mut() {
            Some(rng) if m < d => {
                let mut f = index::sample(rng, d, m).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..d).collect(),
        }
    }

    fn best_split(&self, rows: &[usize], features: &[usize], parent: &[f64]) -> Option<SplitChoice> {
        let total: f64 = parent.iter().sum();
        let parent_gini = gini(parent, total);
        let mut best: Option<SplitChoice> = None;
        let mut sorted: Vec<(f64, usize, f64)> = Vec::with_capacity(rows.len());
        let mut left = vec![0.0; self.n_classes];
        let mut right = vec![0.0; self.n_classes];
        for &f in features {
            let col = self.x.column(f);
            sorted.clear();
            sorted.extend(rows.iter().map(|&i| (col[i], self.y[i], self.weight(i))));
            sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
            left.iter_mut().for_each(|v| *v = 0.0);
            let mut wl = 0.0;
            for p in 0..sorted.len() - 1 {
                let (v, yi, wi) = sorted[p];
                left[yi] += wi;
                wl += wi;
                let next = sorted[p + 1].0;
                if v == next {
                    continue;
                }
                for c in 0..self.n_classes {
                    right[c] = parent[c] - left[c];
                }
                let wr = total - wl;
                let gain = parent_gini - (wl / total) * gini(&left, wl) - (wr / total) * gini(&right, wr);
                if best.is_none_or(|b| gain > b.gain) {
                    best = Some(SplitChoice {
                        feature: f,
                        threshold: midpoint(v, next),
                        gain,
                    });
                }
            }
        }
        best
    }

    fn build(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let counts = self.counts(&rows);
        let id = self.nodes.len();
        self.nodes.push(TreeNode::Leaf { counts: counts.clone() });
        let pure = counts.iter().filter(|&&c| c > 0.0).count() <= 1;
        if pure || depth >= self.config.max_depth || rows.len() < self.config.min_samples_split.max(2) {
            return id;
        }
        let features = self.candidate_features();
        let Some(split) = self.best_split(&rows, &features, &counts) else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = rows
            .into_iter()
            .partition(|&i| self.x[[i, split.feature]] <= split.threshold);
        let left = self.build(l, depth + 1);
        let right = self.build(r, depth + 1);
        self.nodes[id] = TreeNode::Split {
            feature: split.feature,
            threshold: split.threshold,
            gain: split.gain,
            left,
            right,
        };
        id
    }
}

/// Grow a classification tree on `rows` of `(x, y)` (duplicates allowed,
/// as produced by bootstrapping) with optional per-row weights.
pub(crate) fn grow_classifier(
    x: &Array2<f64>,
    y: &[usize],
    n_classes: usize,
    rows: Vec<usize>,
    weights: Option<&[f64]>,
    config: &TreeConfig,
    seed: Option<Seed>,
) -> Result<DecisionTreeModel> {
    if rows.is_empty() {
        return Err(Error::invalid("cannot grow a tree on zero rows"));
    }
    let mut b = ClassBuilder {
        x,
        y,
        w: weights,
        n_classes,
        config,
        rng: seed.map(Seed::rng),
        nodes: Vec::new(),
    };
    b.build(rows, 0);
    Ok(DecisionTreeModel {
        nodes: b.nodes,
        n_features: x.ncols(),
        n_classes,
    })
}

/// Fit a CART classifier on every row of `ds`. `seed` only matters when
/// `max_features` is smaller than the feature count.
pub fn fit_tree(ds: &Dataset, config: &TreeConfig, seed: Seed) -> Result<DecisionTreeModel> {
    grow_classifier(
        ds.features(),
        ds.labels(),
        ds.n_classes(),
        (0..ds.n()).collect(),
        None,
        config,
        Some(seed.derive("tree")),
    )
}

impl DecisionTreeModel {
    fn leaf(&self, x: ArrayView1<f64>) -> &[f64] {
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => id = if x[*feature] <= *threshold { *left } else { *right },
                TreeNode::Leaf { counts } => return counts,
            }
        }
    }

    pub fn proba_row(&self, x: ArrayView1<f64>) -> Vec<f64> {
        let counts = self.leaf(x);
        let total: f64 = counts.iter().sum();
        counts.iter().map(|c| c / total).collect()
    }

    pub fn root_split(&self) -> Option<SplitChoice> {
        match self.nodes.first()? {
            TreeNode::Split {
                feature,
                threshold,
                gain,
                ..
            } => Some(SplitChoice {
                feature: *feature,
                threshold: *threshold,
                gain: *gain,
            }),
            TreeNode::Leaf { .. } => None,
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], id: usize) -> usize {
            match &nodes[id] {
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
                TreeNode::Leaf { .. } => 0,
            }
        }
        walk(&self.nodes, 0)
    }
}

// ---------------------------------------------------------------------------
// Regression trees (boosting base learner)

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum RegressionNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf { value: f64 },
}

/// Row indices of `x` stably sorted by each feature in turn.
pub fn presort(x: &Array2<f64>) -> Vec<Vec<usize>> {
    x.columns()
        .into_iter()
        .map(|col| {
            let mut idx: Vec<usize> = (0..x.nrows()).collect();
            idx.sort_by(|&a, &b| col[a].total_cmp(&col[b]));
            idx
        })
        .collect()
}

struct BuildCtx<'a> {
    x: &'a Array2<f64>,
    order: &'a [Vec<usize>],
    t: &'a [f64],
    max_depth: usize,
    min_split: usize,
    leaf_value: &'a dyn Fn(&[usize]) -> f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<RegressionNode>,
}

impl RegressionTree {
    /// Squared-error tree on `target`; leaf outputs come from `leaf_value`
    /// applied to the rows that reach the leaf.
    pub fn fit(
        x: &Array2<f64>,
        target: &[f64],
        rows: Vec<usize>,
        max_depth: usize,
        min_samples_split: usize,
        leaf_value: &dyn Fn(&[usize]) -> f64,
    ) -> Self {
        Self::fit_sorted(x, &presort(x), target, rows, max_depth, min_samples_split, leaf_value)
    }

    /// As [`RegressionTree::fit`], reusing per-feature row orders from
    /// [`presort`]. `rows` must be ascending.
    pub fn fit_sorted(
        x: &Array2<f64>,
        order: &[Vec<usize>],
        target: &[f64],
        rows: Vec<usize>,
        max_depth: usize,
        min_samples_split: usize,
        leaf_value: &dyn Fn(&[usize]) -> f64,
    ) -> Self {
        let mut tree = RegressionTree { nodes: Vec::new() };
        let mut member = vec![false; x.nrows()];
        let ctx = BuildCtx {
            x,
            order,
            t: target,
            max_depth,
            min_split: min_samples_split.max(2),
            leaf_value,
        };
        tree.build(&ctx, &mut member, rows, 0);
        tree
    }

    fn build(&mut self, ctx: &BuildCtx, member: &mut [bool], rows: Vec<usize>, depth: usize) -> usize {
        let (x, t) = (ctx.x, ctx.t);
        let id = self.nodes.len();
        self.nodes.push(RegressionNode::Leaf { value: (ctx.leaf_value)(&rows) });
        if depth >= ctx.max_depth || rows.len() < ctx.min_split {
            return id;
        }
        let n = rows.len() as f64;
        let sum: f64 = rows.iter().map(|&i| t[i]).sum();
        let base = sum * sum / n;
        let mut best: Option<(usize, f64, f64)> = None;
        rows.iter().for_each(|&i| member[i] = true);
        let mut sorted = Vec::with_capacity(rows.len());
        for (f, col_order) in ctx.order.iter().enumerate() {
            let col = x.column(f);
            sorted.clear();
            sorted.extend(col_order.iter().filter(|&&i| member[i]).map(|&i| (col[i], t[i])));
            let mut sl = 0.0;
            for p in 0..sorted.len() - 1 {
                sl += sorted[p].1;
                let (v, next) = (sorted[p].0, sorted[p + 1].0);
                if v == next {
                    continue;
                }
                let nl = (p + 1) as f64;
                let sr = sum - sl;
                let gain = sl * sl / nl + sr * sr / (n - nl) - base;
                if gain > best.map_or(1e-12, |b| b.2) {
                    best = Some((f, midpoint(v, next), gain));
                }
            }
        }
        rows.iter().for_each(|&i| member[i] = false);
        let Some((feature, threshold, _)) = best else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = rows.into_iter().partition(|&i| x[[i, feature]] <= threshold);
        let left = self.build(ctx, member, l, depth + 1);
        let right = self.build(ctx, member, r, depth + 1);
        self.nodes[id] = RegressionNode::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }

    pub fn predict_row(&self, x: ArrayView1<f64>) -> f64 {
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                RegressionNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => id = if x[*feature] <= *threshold { *left } else { *right },
                RegressionNode::Leaf { value } => return *value,
            }
        }
    }
}
