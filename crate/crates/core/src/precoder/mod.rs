//! Robust multibeam precoding: network, loss, metrics and baselines.

pub mod dlpcn;
pub mod loss;
pub mod metrics;

pub use dlpcn::{loss_spec, network_input, train_dlpcn, Dlpcn, DlpcnArch};
pub use loss::{augment_channels, batch_penalty_loss, penalty_loss, LossReport, LossSpec};
pub use metrics::{
    empirical_outage, empirical_quantile, lambda_power, pack_precoder, sinr, sinr_all, total_power, unpack_precoder,
    wsr, zfbf,
};
