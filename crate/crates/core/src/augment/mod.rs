//! Error modelling and channel-error set construction.

pub mod errors;
pub mod vae;

pub use errors::{compose_error_set, estimation_error_set, gaussian_error_set, ErrorSet};
pub use vae::{kl_gaussian, reparameterize, train_vae, Vae, VaeArch};
