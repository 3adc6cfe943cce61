//! Multi-class tabular classification for building damage grades.
//!
//! The crate covers the full pipeline: CSV loading and label encoding,
//! Isolation Forest anomaly filtering, SMOTE + random undersampling, ANOVA
//! top-k feature selection, classical learners (logistic regression, CART,
//! random forest, gradient boosting, SAMME AdaBoost), voting / bagging /
//! stacking ensembles, hand-differentiated feedforward and KAN-style neural
//! classifiers, metrics, and cross-validated hyperparameter search.
//!
//! Independent work items (trees, ensemble members, folds, candidates) run
//! on rayon when the `parallel` feature is enabled. Every stochastic step
//! draws from a stream derived from a [`rng::Seed`], so results are
//! identical with or without the feature and for any thread count.

pub mod codec;
pub mod dataset;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod learners;
pub mod neural;
pub mod par;
pub mod pipeline;
pub mod preprocess;
pub mod resample;
pub mod rng;
pub mod synthetic;
pub mod tune;

pub use dataset::{ColumnKind, ColumnSpec, Dataset, FeatureSchema, LabelEncoding};
pub use error::{Error, Result};
pub use learners::{Classifier, Model, ModelConfig};
pub use rng::Seed;
