//! Anomaly filtering and univariate feature selection.

mod isolation;
mod select;

pub use isolation::{
    anomaly_scores, average_path_length, filter_anomalies, fit_isolation_forest, IsolationConfig,
    IsolationForestModel, IsolationNode, IsolationTree,
};
pub use select::{anova_f_scores, select_k_best, FScore, SelectorState};
