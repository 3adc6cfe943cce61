//! Confusion matrices, per-class metrics, one-vs-rest AUC and report
//! rendering.

use std::fmt::Write as _;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `counts[i][j]` = instances of true class `i` predicted as `j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes()).map(|i| self.counts[i][i]).sum()
    }
}

pub fn confusion_matrix(y_true: &[usize], y_pred: &[usize], n_classes: usize) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(Error::DimensionMismatch {
            expected: y_true.len(),
            got: y_pred.len(),
        });
    }
    let mut counts = vec![vec![0u64; n_classes]; n_classes];
    for (i, (&t, &p)) in y_true.iter().zip(y_pred).enumerate() {
        if t >= n_classes || p >= n_classes {
            return Err(Error::invalid(format!(
                "label out of range at position {i}: true {t}, predicted {p}, {n_classes} classes"
            )));
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassMetrics {
    pub class: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// Metrics whose denominator was zero (reported as 0).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub undefined: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AucReport {
    /// `None` when the class is absent or covers every instance.
    pub per_class: Vec<Option<f64>>,
    pub macro_auc: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub undefined: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    pub per_class: Vec<ClassMetrics>,
    pub accuracy: f64,
    #[serde(rename = "macro")]
    pub macro_avg: Averages,
    pub weighted: Averages,
    pub micro_f1: f64,
    pub confusion: ConfusionMatrix,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auc: Option<AucReport>,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

/// Per-class precision, recall and F1 (`2TP / (2TP + FP + FN)`, the same
/// quantity as `2PR / (P + R)`), accuracy and macro / weighted / micro
/// averages. Zero denominators give 0 and are listed in `undefined`.
pub fn class_metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if cm.n_classes() == 0 || total == 0 {
        return Err(Error::invalid("empty confusion matrix"));
    }
    let k = cm.n_classes();
    let mut per_class = Vec::with_capacity(k);
    let (mut tp_sum, mut fp_sum, mut fn_sum) = (0u64, 0u64, 0u64);
    for c in 0..k {
        let tp = cm.counts[c][c];
        let fp = cm.col_sum(c) - tp;
        let fn_ = cm.row_sum(c) - tp;
        tp_sum += tp;
        fp_sum += fp;
        fn_sum += fn_;
        let mut undefined = Vec::new();
        let (precision, u) = ratio(tp, tp + fp);
        if u {
            undefined.push("precision".to_string());
        }
        let (recall, u) = ratio(tp, tp + fn_);
        if u {
            undefined.push("recall".to_string());
        }
        let (f1, u) = ratio(2 * tp, 2 * tp + fp + fn_);
        if u {
            undefined.push("f1".to_string());
        }
        per_class.push(ClassMetrics {
            class: c,
            precision,
            recall,
            f1,
            support: tp + fn_,
            undefined,
        });
    }
    let kf = k as f64;
    let macro_avg = Averages {
        precision: per_class.iter().map(|m| m.precision).sum::<f64>() / kf,
        recall: per_class.iter().map(|m| m.recall).sum::<f64>() / kf,
        f1: per_class.iter().map(|m| m.f1).sum::<f64>() / kf,
    };
    let tf = total as f64;
    let weighted = Averages {
        precision: per_class.iter().map(|m| m.support as f64 * m.precision).sum::<f64>() / tf,
        recall: per_class.iter().map(|m| m.support as f64 * m.recall).sum::<f64>() / tf,
        f1: per_class.iter().map(|m| m.support as f64 * m.f1).sum::<f64>() / tf,
    };
    Ok(MetricsReport {
        per_class,
        accuracy: cm.trace() as f64 / tf,
        macro_avg,
        weighted,
        micro_f1: ratio(2 * tp_sum, 2 * tp_sum + fp_sum + fn_sum).0,
        confusion: cm.clone(),
        auc: None,
    })
}

/// Convenience: confusion matrix, metrics and (when probabilities are given)
/// AUC in one call. AUC failures leave `auc` empty.
pub fn evaluate_predictions(
    y_true: &[usize],
    y_pred: &[usize],
    proba: Option<&Array2<f64>>,
    n_classes: usize,
) -> Result<MetricsReport> {
    let mut report = class_metrics(&confusion_matrix(y_true, y_pred, n_classes)?)?;
    if let Some(p) = proba {
        report.auc = roc_auc_ovr(y_true, p).ok();
    }
    Ok(report)
}

/// Average ranks (1-based) with ties sharing their mean rank.
pub fn midranks(scores: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Binary AUC from ranks: `(sum of positive ranks - P(P+1)/2) / (P N)`.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let p = positive.iter().filter(|&&b| b).count();
    let n = positive.len() - p;
    if p == 0 || n == 0 {
        return None;
    }
    let ranks = midranks(scores);
    let rank_sum: f64 = ranks.iter().zip(positive).filter(|(_, &b)| b).map(|(r, _)| r).sum();
    let (pf, nf) = (p as f64, n as f64);
    Some((rank_sum - pf * (pf + 1.0) / 2.0) / (pf * nf))
}

/// One-vs-rest AUC per class from column `c` of the probability matrix.
pub fn roc_auc_ovr(y_true: &[usize], proba: &Array2<f64>) -> Result<AucReport> {
    if proba.nrows() != y_true.len() {
        return Err(Error::DimensionMismatch {
            expected: y_true.len(),
            got: proba.nrows(),
        });
    }
    for (i, row) in proba.rows().into_iter().enumerate() {
        if (row.sum() - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!("probability row {i} does not sum to 1")));
        }
    }
    let k = proba.ncols();
    let mut per_class = Vec::with_capacity(k);
    let mut undefined = Vec::new();
    for c in 0..k {
        let scores: Vec<f64> = proba.column(c).to_vec();
        let positive: Vec<bool> = y_true.iter().map(|&y| y == c).collect();
        let auc = binary_auc(&scores, &positive);
        if auc.is_none() {
            undefined.push(c);
        }
        per_class.push(auc);
    }
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(Error::invalid("AUC undefined for every class (labels cover a single class)"));
    }
    Ok(AucReport {
        macro_auc: defined.iter().sum::<f64>() / defined.len() as f64,
        per_class,
        undefined,
    })
}

// ---------------------------------------------------------------------------
// Reports

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelReport {
    pub model: String,
    #[serde(flatten)]
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedReport {
    pub json: String,
    pub text: String,
    pub csv: String,
}

/// One row of a per-class table: precision, recall, F1, accuracy, macro F1,
/// weighted F1.
pub fn table_row(m: &MetricsReport, class: usize) -> [f64; 6] {
    let c = &m.per_class[class];
    [c.precision, c.recall, c.f1, m.accuracy, m.macro_avg.f1, m.weighted.f1]
}

pub const TABLE_COLUMNS: [&str; 6] = ["Precision", "Recall", "F1", "Accuracy", "Macro Avg", "Weighted Avg"];

/// JSON with full precision, plus one aligned text table and one CSV block
/// per class with values rounded to two decimals.
pub fn render_report(reports: &[ModelReport]) -> Result<RenderedReport> {
    let json = serde_json::to_string_pretty(reports)? + "\n";
    let n_classes = reports.iter().map(|r| r.metrics.per_class.len()).max().unwrap_or(0);
    let name_w = reports.iter().map(|r| r.model.len()).chain(["Algorithm".len()]).max().unwrap_or(9);
    let mut text = String::new();
    let mut csv = String::from("class,algorithm,precision,recall,f1,accuracy,macro_avg,weighted_avg\n");
    for class in 0..n_classes {
        if class > 0 {
            text.push('\n');
        }
        let _ = writeln!(text, "Performance metrics for class {class}");
        let _ = write!(text, "{:<name_w$}", "Algorithm");
        for col in TABLE_COLUMNS {
            let _ = write!(text, "  {col:>12}");
        }
        text.push('\n');
        for r in reports.iter().filter(|r| class < r.metrics.per_class.len()) {
            let row = table_row(&r.metrics, class);
            let _ = write!(text, "{:<name_w$}", r.model);
            let _ = write!(csv, "{class},{}", csv_field(&r.model));
            for v in row {
                let _ = write!(text, "  {v:>12.2}");
                let _ = write!(csv, ",{v:.2}");
            }
            text.push('\n');
            csv.push('\n');
        }
    }
    Ok(RenderedReport { json, text, csv })
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
