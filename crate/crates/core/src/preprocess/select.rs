use std::cmp::Ordering;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// One-way ANOVA F statistic. A feature whose classes are perfectly
/// separated by constant values has zero within-class variance; it ranks
/// above every finite score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FScore {
    Finite(f64),
    Infinite,
}

impl FScore {
    pub fn value(self) -> f64 {
        match self {
            FScore::Finite(v) => v,
            FScore::Infinite => f64::INFINITY,
        }
    }
}

impl Eq for FScore {}

impl PartialOrd for FScore {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for FScore {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (FScore::Infinite, FScore::Infinite) => Ordering::Equal,
            (FScore::Infinite, _) => Ordering::Greater,
            (_, FScore::Infinite) => Ordering::Less,
            (FScore::Finite(a), FScore::Finite(b)) => a.total_cmp(b),
        }
    }
}

/// F_j = [sum_c n_c (mean_cj - mean_j)^2 / (C-1)] / [sum_c sum_{i in c} (x_ij - mean_cj)^2 / (n-C)]
/// over the classes present in the labels.
pub fn anova_f_scores(ds: &Dataset) -> Result<Vec<FScore>> {
    let rows: Vec<Vec<usize>> = ds.class_rows().into_iter().filter(|r| !r.is_empty()).collect();
    let c = rows.len();
    let n = ds.n();
    if c < 2 {
        return Err(Error::invalid("ANOVA needs at least two classes present"));
    }
    if n <= c {
        return Err(Error::invalid(format!("ANOVA needs more rows ({n}) than classes ({c})")));
    }
    let x = ds.features();
    Ok((0..ds.d())
        .map(|j| {
            let col = x.column(j);
            let grand = col.sum() / n as f64;
            let mut between = 0.0;
            let mut within = 0.0;
            for class_rows in &rows {
                let nc = class_rows.len() as f64;
                let mean = class_rows.iter().map(|&i| col[i]).sum::<f64>() / nc;
                between += nc * (mean - grand).powi(2);
                within += class_rows.iter().map(|&i| (col[i] - mean).powi(2)).sum::<f64>();
            }
            let ms_between = between / (c - 1) as f64;
            let ms_within = within / (n - c) as f64;
            if ms_within == 0.0 {
                if ms_between == 0.0 {
                    FScore::Finite(0.0)
                } else {
                    FScore::Infinite
                }
            } else {
                FScore::Finite(ms_between / ms_within)
            }
        })
        .collect())
}

/// Fitted top-k selection, reusable on unseen data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectorState {
    pub f_scores: Vec<FScore>,
    /// Original column indices, ascending.
    pub selected: Vec<usize>,
    pub k: usize,
    pub n_features_in: usize,
}

impl SelectorState {
    /// Indices of the `k` largest scores, ties toward the lower index,
    /// returned in ascending column order.
    pub fn from_scores(f_scores: Vec<FScore>, k: usize) -> Result<Self> {
        let d = f_scores.len();
        if k == 0 || k > d {
            return Err(Error::invalid(format!("k = {k} must lie in 1..={d}")));
        }
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| f_scores[b].cmp(&f_scores[a]).then(a.cmp(&b)));
        let mut selected = order[..k].to_vec();
        selected.sort_unstable();
        Ok(SelectorState {
            f_scores,
            selected,
            k,
            n_features_in: d,
        })
    }

    pub fn identity(d: usize) -> Self {
        SelectorState {
            f_scores: vec![FScore::Finite(0.0); d],
            selected: (0..d).collect(),
            k: d,
            n_features_in: d,
        }
    }

    pub fn transform(&self, ds: &Dataset) -> Result<Dataset> {
        self.check(ds.d())?;
        Ok(ds.select_columns(&self.selected))
    }

    pub fn transform_matrix(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check(x.ncols())?;
        Ok(x.select(ndarray::Axis(1), &self.selected))
    }

    fn check(&self, d: usize) -> Result<()> {
        if d != self.n_features_in {
            return Err(Error::DimensionMismatch {
                expected: self.n_features_in,
                got: d,
            });
        }
        Ok(())
    }
}

pub fn select_k_best(ds: &Dataset, k: usize) -> Result<(SelectorState, Dataset)> {
    if k == 0 || k > ds.d() {
        return Err(Error::invalid(format!("k = {k} must lie in 1..={}", ds.d())));
    }
    let state = SelectorState::from_scores(anova_f_scores(ds)?, k)?;
    let reduced = state.transform(ds)?;
    Ok((state, reduced))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn equal_class_means_give_zero() {
        let x = array![[1.0], [3.0], [1.0], [3.0], [1.0], [3.0]];
        let ds = Dataset::from_arrays(x, vec![0, 0, 1, 1, 2, 2], 3).unwrap();
        assert_eq!(anova_f_scores(&ds).unwrap(), vec![FScore::Finite(0.0)]);
    }

    #[test]
    fn label_feature_is_infinite_and_ranked_first() {
        let x = array![[0.0, 5.0], [0.0, 1.0], [1.0, 2.0], [1.0, 9.0], [2.0, 3.0], [2.0, 3.5]];
        let ds = Dataset::from_arrays(x, vec![0, 0, 1, 1, 2, 2], 3).unwrap();
        let f = anova_f_scores(&ds).unwrap();
        assert_eq!(f[0], FScore::Infinite);
        assert!(f[0] > f[1]);
        let (state, reduced) = select_k_best(&ds, 1).unwrap();
        assert_eq!(state.selected, vec![0]);
        assert_eq!(reduced.d(), 1);
    }

    #[test]
    fn constant_feature_is_zero() {
        let x = array![[4.0], [4.0], [4.0], [4.0]];
        let ds = Dataset::from_arrays(x, vec![0, 1, 0, 1], 2).unwrap();
        assert_eq!(anova_f_scores(&ds).unwrap(), vec![FScore::Finite(0.0)]);
    }

    #[test]
    fn hand_computed_six_rows() {
        // classes: {1, 2}, {4, 6}, {7, 9}; grand mean 29/6
        // class means 1.5, 5, 8
        // between = 2[(1.5-29/6)^2 + (5-29/6)^2 + (8-29/6)^2] = 2[100/9 + 1/36 + 361/36] = 42.444...
        // within = 0.5 + 2 + 2 = 4.5
        // F = (between / 2) / (within / 3)
        let x = array![[1.0], [2.0], [4.0], [6.0], [7.0], [9.0]];
        let ds = Dataset::from_arrays(x, vec![0, 0, 1, 1, 2, 2], 3).unwrap();
        let between = 2.0 * (100.0 / 9.0 + 1.0 / 36.0 + 361.0 / 36.0);
        let expected = (between / 2.0) / (4.5 / 3.0);
        let got = anova_f_scores(&ds).unwrap()[0].value();
        assert!((got - expected).abs() / expected < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn single_class_is_rejected() {
        let ds = Dataset::from_arrays(array![[1.0], [2.0], [3.0]], vec![1, 1, 1], 3).unwrap();
        assert!(anova_f_scores(&ds).is_err());
    }

    #[test]
    fn selection_rule() {
        let s = SelectorState::from_scores(
            vec![FScore::Finite(5.0), FScore::Finite(1.0), FScore::Finite(9.0)],
            2,
        )
        .unwrap();
        assert_eq!(s.selected, vec![0, 2]);
        let tie = SelectorState::from_scores(vec![FScore::Finite(2.0); 4], 2).unwrap();
        assert_eq!(tie.selected, vec![0, 1]);
        assert!(SelectorState::from_scores(vec![FScore::Finite(1.0)], 2).is_err());
    }

    #[test]
    fn k_equals_d_is_identity() {
        let x = array![[1.0, 2.0], [2.0, 1.0], [3.0, 7.0], [5.0, 0.0]];
        let ds = Dataset::from_arrays(x, vec![0, 1, 0, 1], 2).unwrap();
        let (_, reduced) = select_k_best(&ds, 2).unwrap();
        assert_eq!(reduced.features(), ds.features());
        assert!(select_k_best(&ds, 3).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn shift_and_scale_leave_f_unchanged(
            vals in proptest::collection::vec(-10.0f64..10.0, 9..30),
            shift in -100.0f64..100.0,
            scale in prop_oneof![-20.0f64..-0.1, 0.1f64..20.0],
        ) {
            let n = vals.len();
            let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
            let x = ndarray::Array2::from_shape_fn((n, 1), |(i, _)| vals[i]);
            let f0 = anova_f_scores(&Dataset::from_arrays(x.clone(), labels.clone(), 3).unwrap()).unwrap()[0].value();
            let x2 = x.mapv(|v| v * scale + shift);
            let f1 = anova_f_scores(&Dataset::from_arrays(x2, labels, 3).unwrap()).unwrap()[0].value();
            prop_assert!((f0 - f1).abs() <= 1e-7 * f0.abs().max(1.0));
        }

        #[test]
        fn selection_invariant_under_monotone_map(scores in proptest::collection::vec(0.0f64..100.0, 1..12), k_frac in 0.0f64..1.0) {
            let d = scores.len();
            let k = 1 + ((d - 1) as f64 * k_frac) as usize;
            let a = SelectorState::from_scores(scores.iter().map(|&v| FScore::Finite(v)).collect(), k).unwrap();
            let b = SelectorState::from_scores(scores.iter().map(|&v| FScore::Finite((v + 1.0).ln() * 3.0)).collect(), k).unwrap();
            prop_assert_eq!(a.selected, b.selected);
        }
    }
}
