//! Simulation and learning stack for multibeam LEO satellite IoT downlinks.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments, clippy::type_complexity)]

pub mod augment;
pub mod channel;
pub mod config;
pub mod dataset;
pub mod error;
pub mod harness;
pub mod estimation;
pub mod linalg;
pub mod nn;
pub mod precoder;
pub mod predictor;
pub mod rng;

pub use config::{RunConfig, SystemConfig};
pub use error::{Error, Result};
