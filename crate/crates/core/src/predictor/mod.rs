//! Channel prediction from a window of past estimates.

pub mod dlpdn;
pub mod linear;
pub mod samples;
pub mod transform;

pub use dlpdn::{mean_nmse, train_dlpdn, Dlpdn, DlpdnArch};
pub use linear::LinearPredictor;
pub use samples::{PredictionSample, SampleSet};
pub use transform::{nmse, prediction_error, to_db, zeta, zeta_inv, Standardizer};
