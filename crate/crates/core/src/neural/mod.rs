//! Hand-differentiated neural classifiers trained with Adam.
//!
//! Parameters live in one flat vector described by a [`layers::Layout`];
//! optimiser state, gradient checks and serialisation all work on that
//! vector.

pub mod adam;
pub mod ffn;
pub mod kan;
pub mod layers;
pub mod train;

pub use adam::AdamState;
pub use ffn::{train_ffn, train_ffn_logged, FfnCache, FfnConfig, FfnModel};
pub use kan::{train_kan, train_kan_logged, KanCache, KanConfig, KanModel};
pub use layers::{BatchNormState, Mode};
pub use train::{EarlyStopping, EpochRecord, Monitor, StepLr, StopDecision, TrainLog};
