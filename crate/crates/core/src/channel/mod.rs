//! Downlink channel generation: rain, Bessel beam gain, UCA response and
//! Rician LOS/NLOS mixing with per-path Doppler.

pub mod antenna;
pub mod bessel;
pub mod model;

pub use antenna::Antenna;
pub use model::{
    channel_realization, generate_episode, generate_episodes, large_scale_gain, los_component, nlos_component,
    sample_rain, ChannelEpisode, DeviceGeometry, Path,
};
