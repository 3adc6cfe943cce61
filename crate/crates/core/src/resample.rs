//! Class rebalancing: SMOTE oversampling plus random undersampling.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::par;
use crate::rng::Seed;

pub const DEFAULT_SMOTE_K: usize = 5;

/// Per-class target counts for [`balance`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResamplePlan {
    pub targets: Vec<usize>,
    pub smote_k: usize,
    pub seed: Seed,
}

impl ResamplePlan {
    pub fn new(targets: Vec<usize>, smote_k: usize, seed: Seed) -> Result<Self> {
        if targets.contains(&0) {
            return Err(Error::invalid("every class target must be at least 1"));
        }
        if smote_k == 0 {
            return Err(Error::invalid("smote_k must be at least 1"));
        }
        Ok(ResamplePlan {
            targets,
            smote_k,
            seed,
        })
    }

    /// Every class moves to the median class count. With an even number of
    /// classes the two middle counts are averaged and rounded down.
    pub fn median(counts: &[usize], smote_k: usize, seed: Seed) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::invalid("no classes to balance"));
        }
        let mut sorted = counts.to_vec();
        sorted.sort_unstable();
        let m = sorted.len();
        let target = if m % 2 == 1 {
            sorted[m / 2]
        } else {
            (sorted[m / 2 - 1] + sorted[m / 2]) / 2
        };
        ResamplePlan::new(vec![target; m], smote_k, seed)
    }
}

/// How a plan is written in configuration: `"median"` or explicit targets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PlanStrategy {
    Named(NamedStrategy),
    Targets { targets: Vec<usize> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedStrategy {
    Median,
}

impl Default for PlanStrategy {
    fn default() -> Self {
        PlanStrategy::Named(NamedStrategy::Median)
    }
}

impl PlanStrategy {
    pub fn plan(&self, ds: &Dataset, smote_k: usize, seed: Seed) -> Result<ResamplePlan> {
        match self {
            PlanStrategy::Named(NamedStrategy::Median) => {
                ResamplePlan::median(&ds.class_counts(), smote_k, seed)
            }
            PlanStrategy::Targets { targets } => {
                if targets.len() != ds.n_classes() {
                    return Err(Error::invalid(format!(
                        "{} targets for {} classes",
                        targets.len(),
                        ds.n_classes()
                    )));
                }
                ResamplePlan::new(targets.clone(), smote_k, seed)
            }
        }
    }
}

/// `features = x[parent_i] + lambda * (x[parent_j] - x[parent_i])`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub features: Array1<f64>,
    pub parent_i: usize,
    pub parent_j: usize,
    pub lambda: f64,
}

fn sq_dist(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// The `k` nearest rows to `row` among `candidates` (excluding itself);
/// distance ties go to the lower row index.
pub fn nearest_neighbors(x: &Array2<f64>, row: usize, candidates: &[usize], k: usize) -> Vec<usize> {
    let mut d: Vec<(f64, usize)> = candidates
        .iter()
        .filter(|&&c| c != row)
        .map(|&c| (sq_dist(x.row(row), x.row(c)), c))
        .collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d.truncate(k);
    d.into_iter().map(|(_, c)| c).collect()
}

/// Draw `n_new` synthetic rows for `class`. Parent indices refer to rows of `ds`.
pub fn smote_oversample(ds: &Dataset, class: usize, n_new: usize, k: usize, seed: Seed) -> Result<Vec<SyntheticSample>> {
    if class >= ds.n_classes() {
        return Err(Error::invalid(format!("class {class} out of range")));
    }
    let members = &ds.class_rows()[class];
    if members.len() < 2 {
        return Err(Error::invalid(format!(
            "SMOTE needs at least 2 instances of class {class}, found {}",
            members.len()
        )));
    }
    if k == 0 || k > members.len() - 1 {
        return Err(Error::invalid(format!(
            "SMOTE k = {k} too large for class {class} with {} instances",
            members.len()
        )));
    }
    let mut rng = seed.rng();
    let draws: Vec<(usize, usize, f64)> = (0..n_new)
        .map(|_| {
            let i = members[rng.random_range(0..members.len())];
            let nb = rng.random_range(0..k);
            let lambda: f64 = rng.random();
            (i, nb, lambda)
        })
        .collect();

    // neighbour lists only for parents that were drawn
    let mut parents: Vec<usize> = draws.iter().map(|d| d.0).collect();
    parents.sort_unstable();
    parents.dedup();
    let x = ds.features();
    let lists = par::map_slice(&parents, |&p| nearest_neighbors(x, p, members, k));
    let neighbors: BTreeMap<usize, Vec<usize>> = parents.into_iter().zip(lists).collect();

    Ok(draws
        .into_iter()
        .map(|(i, nb, lambda)| {
            let j = neighbors[&i][nb];
            let xi = x.row(i);
            let xj = x.row(j);
            let features = Array1::from_iter(xi.iter().zip(xj.iter()).map(|(a, b)| a + lambda * (b - a)));
            SyntheticSample {
                features,
                parent_i: i,
                parent_j: j,
                lambda,
            }
        })
        .collect())
}

/// Keep `n_keep` rows of `class` drawn uniformly without replacement;
/// survivors stay in their original order.
pub fn random_undersample(ds: &Dataset, class: usize, n_keep: usize, seed: Seed) -> Result<Dataset> {
    let members = ds.class_rows().get(class).cloned().ok_or_else(|| {
        Error::invalid(format!("class {class} out of range"))
    })?;
    if n_keep == 0 {
        return Err(Error::invalid("n_keep must be at least 1"));
    }
    if n_keep > members.len() {
        return Err(Error::invalid(format!(
            "cannot keep {n_keep} rows of class {class}, only {} present",
            members.len()
        )));
    }
    let mut rng = seed.rng();
    let mut chosen: Vec<usize> = index::sample(&mut rng, members.len(), n_keep)
        .into_iter()
        .map(|p| members[p])
        .collect();
    chosen.sort_unstable();
    let mut keep = vec![true; ds.n()];
    for &m in &members {
        keep[m] = false;
    }
    for &c in &chosen {
        keep[c] = true;
    }
    let rows: Vec<usize> = (0..ds.n()).filter(|&i| keep[i]).collect();
    Ok(ds.select_rows(&rows))
}

/// Bring every class to its plan target, then shuffle rows.
pub fn balance(ds: &Dataset, plan: &ResamplePlan) -> Result<Dataset> {
    if plan.targets.len() != ds.n_classes() {
        return Err(Error::invalid(format!(
            "plan has {} targets for {} classes",
            plan.targets.len(),
            ds.n_classes()
        )));
    }
    let counts = ds.class_counts();
    let mut current = ds.clone();
    for (class, (&count, &target)) in counts.iter().zip(&plan.targets).enumerate() {
        if count > target {
            current = random_undersample(&current, class, target, plan.seed.derive("undersample").child(class as u64))?;
        }
    }
    let mut synthetic: Vec<(Array1<f64>, usize)> = Vec::new();
    for (class, (&count, &target)) in counts.iter().zip(&plan.targets).enumerate() {
        if count < target {
            let k = plan.smote_k;
            let samples = smote_oversample(
                &current,
                class,
                target - count,
                k,
                plan.seed.derive("smote").child(class as u64),
            )?;
            synthetic.extend(samples.into_iter().map(|s| (s.features, class)));
        }
    }
    let d = current.d();
    let n = current.n() + synthetic.len();
    let mut x = Array2::<f64>::zeros((n, d));
    let mut y = Vec::with_capacity(n);
    for i in 0..current.n() {
        x.row_mut(i).assign(&current.row(i));
        y.push(current.labels()[i]);
    }
    for (k, (f, c)) in synthetic.into_iter().enumerate() {
        x.row_mut(current.n() + k).assign(&f);
        y.push(c);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut plan.seed.derive("shuffle").rng());
    let merged = current.with_data(x, y)?;
    Ok(merged.select_rows(&order))
}
