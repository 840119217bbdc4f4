use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::channel::antenna::Antenna;
use crate::config::{SystemConfig, SPEED_OF_LIGHT};
use crate::error::{Error, Result};
use crate::linalg::{crandn, CMat, CVec, C64};
use crate::rng::{rng_for, stream};

/// One NLOS path of a device.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub gain: C64,
    pub doppler_hz: f64,
    /// Delay in excess of the device's shortest path.
    pub excess_delay_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceGeometry {
    /// Off-axis angle θ_k.
    pub theta: f64,
    /// Azimuth ϕ_k.
    pub azimuth: f64,
    /// Linear rain attenuation r_k ≥ 1.
    pub rain: f64,
    /// Large-scale amplitude g_k.
    pub large_scale: f64,
    pub paths: Vec<Path>,
    /// UCA response for (θ_k, ϕ_k).
    pub steering: CVec,
}

/// (c / (4π f_c d_0))².
pub fn free_space_gain(cfg: &SystemConfig) -> f64 {
    let a = SPEED_OF_LIGHT / (4.0 * PI * cfg.carrier_hz * cfg.altitude_m);
    a * a
}

/// ln(r^dB) ~ N(μ_r, σ_r²), r = 10^(r^dB/20).
pub fn sample_rain<R: Rng + ?Sized>(rng: &mut R, cfg: &SystemConfig) -> f64 {
    let normal = Normal::new(cfg.rain_mu, cfg.rain_var.sqrt()).expect("validated rain variance");
    rain_from_log(normal.sample(rng))
}

pub fn rain_from_log(x: f64) -> f64 {
    10f64.powf(x.exp() / 20.0)
}

/// g_k = sqrt(FSPL · G_k·ω_k/(κBT) / r_k).
pub fn large_scale_gain(theta: f64, rain: f64, cfg: &SystemConfig, antenna: &Antenna) -> f64 {
    (free_space_gain(cfg) * cfg.device_gain() * antenna.gain(theta) / cfg.thermal_noise_w() / rain).sqrt()
}

pub fn sample_device<R: Rng + ?Sized>(rng: &mut R, cfg: &SystemConfig, antenna: &Antenna) -> DeviceGeometry {
    let theta = rng.gen_range(0.0..=cfg.theta_max());
    let azimuth = rng.gen_range(0.0..2.0 * PI);
    let rain = sample_rain(rng, cfg);
    let nu = cfg.device_doppler_max_hz;
    let mut paths: Vec<Path> = (0..cfg.nlos_paths)
        .map(|_| Path {
            gain: crandn(rng, 1.0),
            doppler_hz: if nu > 0.0 { rng.gen_range(-nu..=nu) } else { 0.0 },
            excess_delay_s: if cfg.max_excess_delay_s > 0.0 { rng.gen_range(0.0..cfg.max_excess_delay_s) } else { 0.0 },
        })
        .collect();
    let min_delay = paths.iter().map(|p| p.excess_delay_s).fold(f64::INFINITY, f64::min);
    for p in &mut paths {
        p.excess_delay_s -= min_delay;
    }
    DeviceGeometry {
        theta,
        azimuth,
        rain,
        large_scale: large_scale_gain(theta, rain, cfg, antenna),
        paths,
        steering: antenna.steering(theta, azimuth),
    }
}

/// exp(j2π·x) computed on the fractional part of x.
fn cis_cycles(x: f64) -> C64 {
    C64::from_polar(1.0, 2.0 * PI * x.fract())
}

/// exp(j2π(t·ν_sat − f_c·τ_min))·G.
pub fn los_component(t: f64, dev: &DeviceGeometry, cfg: &SystemConfig) -> CVec {
    let phase = cis_cycles(t * cfg.sat_doppler_hz) * cis_cycles(-cfg.carrier_hz * cfg.min_delay_s);
    dev.steering.map(|z| z * phase)
}

/// NLOS scalar process (1/√L)·Σ a_l·exp(j2πtν_l)·exp(j2π f_c τ_l).
pub fn nlos_scalar(t: f64, dev: &DeviceGeometry, cfg: &SystemConfig) -> C64 {
    let sum: C64 = dev
        .paths
        .iter()
        .map(|p| p.gain * cis_cycles(t * p.doppler_hz) * cis_cycles(cfg.carrier_hz * p.excess_delay_s))
        .sum();
    sum / (dev.paths.len() as f64).sqrt()
}

pub fn nlos_component(t: f64, dev: &DeviceGeometry, cfg: &SystemConfig) -> CVec {
    let s = nlos_scalar(t, dev, cfg);
    dev.steering.map(|z| z * s)
}

/// (sqrt(λ/(λ+1)), sqrt(1/(λ+1))).
pub fn rician_weights(lambda: f64) -> (f64, f64) {
    if lambda.is_infinite() {
        (1.0, 0.0)
    } else {
        ((lambda / (lambda + 1.0)).sqrt(), (1.0 / (lambda + 1.0)).sqrt())
    }
}

/// h_k(t) = g_k·(sqrt(λ/(λ+1))·h^LOS + sqrt(1/(λ+1))·h^NLOS).
pub fn channel_realization(t: f64, dev: &DeviceGeometry, cfg: &SystemConfig) -> CVec {
    let (wl, wn) = rician_weights(cfg.rician_factor);
    let los = cis_cycles(t * cfg.sat_doppler_hz) * cis_cycles(-cfg.carrier_hz * cfg.min_delay_s);
    let s = (los * wl + nlos_scalar(t, dev, cfg) * wn) * dev.large_scale;
    dev.steering.map(|z| z * s)
}

/// A run of consecutive slots with fixed device geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelEpisode {
    pub config: SystemConfig,
    pub seed: u64,
    pub devices: Vec<DeviceGeometry>,
    /// H(t) for t = 0, Δt, 2Δt, ...; each M×K.
    pub slots: Vec<CMat>,
}

impl ChannelEpisode {
    pub fn time_of(&self, slot: usize) -> f64 {
        slot as f64 * self.config.slot_s
    }

    /// Rebuild H at an arbitrary slot index from the stored geometry.
    pub fn regenerate(&self, slot: usize) -> CMat {
        channel_matrix(self.time_of(slot), &self.devices, &self.config)
    }
}

pub fn channel_matrix(t: f64, devices: &[DeviceGeometry], cfg: &SystemConfig) -> CMat {
    let m = cfg.antennas;
    let mut h = CMat::zeros(m, devices.len());
    for (k, dev) in devices.iter().enumerate() {
        h.set_column(k, &channel_realization(t, dev, cfg));
    }
    h
}

/// Deterministic in (cfg, seed): draws geometry once, then evaluates every slot.
pub fn generate_episode(cfg: &SystemConfig, antenna: &Antenna, n_slots: usize, seed: u64) -> Result<ChannelEpisode> {
    if n_slots < 2 {
        return Err(Error::invalid(format!("episode needs at least 2 slots, got {n_slots}")));
    }
    let mut rng = rng_for(seed, stream::EPISODE, 0);
    let devices: Vec<DeviceGeometry> = (0..cfg.devices).map(|_| sample_device(&mut rng, cfg, antenna)).collect();
    let slots: Vec<CMat> = (0..n_slots)
        .map(|s| channel_matrix(s as f64 * cfg.slot_s, &devices, cfg))
        .collect();
    if slots.iter().any(|h| h.iter().any(|z| !(z.re.is_finite() && z.im.is_finite()))) {
        return Err(Error::NonFinite("channel episode".into()));
    }
    Ok(ChannelEpisode { config: cfg.clone(), seed, devices, slots })
}

/// Episodes with seeds derived from the master seed, generated in parallel.
pub fn generate_episodes(cfg: &SystemConfig, n_episodes: usize, n_slots: usize, master_seed: u64) -> Result<Vec<ChannelEpisode>> {
    let antenna = Antenna::calibrate(cfg)?;
    (0..n_episodes)
        .into_par_iter()
        .map(|e| generate_episode(cfg, &antenna, n_slots, crate::rng::derive_seed(master_seed, stream::EPISODE, e as u64)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (SystemConfig, Antenna) {
        let cfg = SystemConfig::desk();
        let ant = Antenna::calibrate(&cfg).unwrap();
        (cfg, ant)
    }

    #[test]
    fn free_space_reference() {
        let f = free_space_gain(&SystemConfig::default());
        assert!((f / 2.2765734628573803e-17 - 1.0).abs() < 1e-9);
        assert!((10.0 * f.log10() + 166.427).abs() < 1e-3);
    }

    #[test]
    fn zero_variance_rain() {
        let r = rain_from_log(-2.6);
        assert!(((-2.6f64).exp() - 0.0743).abs() < 1e-4);
        assert!((r - 1.0086).abs() < 1e-4);
    }

    #[test]
    fn rain_never_amplifies() {
        let cfg = SystemConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!((0..10_000).all(|_| sample_rain(&mut rng, &cfg) >= 1.0));
    }

    #[test]
    fn altitude_doubling_halves_amplitude() {
        let (mut cfg, ant) = setup();
        let g1 = large_scale_gain(0.001, 1.2, &cfg, &ant);
        cfg.altitude_m *= 2.0;
        let g2 = large_scale_gain(0.001, 1.2, &cfg, &ant);
        assert!((g1 / g2 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn single_static_path_is_steering_vector() {
        let (mut cfg, ant) = setup();
        cfg.nlos_paths = 1;
        let dev = DeviceGeometry {
            theta: 0.003,
            azimuth: 0.4,
            rain: 1.0,
            large_scale: 1.0,
            paths: vec![Path { gain: C64::new(1.0, 0.0), doppler_hz: 0.0, excess_delay_s: 0.0 }],
            steering: ant.steering(0.003, 0.4),
        };
        let h = nlos_component(0.37, &dev, &cfg);
        assert!((h - &dev.steering).norm() < 1e-14);
    }

    #[test]
    fn los_has_unit_modulus_and_slot_phase_advance() {
        let (mut cfg, ant) = setup();
        cfg.min_delay_s = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let dev = sample_device(&mut rng, &cfg, &ant);
        let h0 = los_component(0.0, &dev, &cfg);
        assert!((h0.clone() - &dev.steering).norm() < 1e-14);
        assert!((h0.norm_squared() - cfg.antennas as f64).abs() < 1e-12);
        cfg.sat_doppler_hz = 123.4;
        let h1 = los_component(cfg.slot_s, &dev, &cfg);
        let expected = C64::from_polar(1.0, 2.0 * PI * (123.4 * cfg.slot_s));
        assert!((h1[0] / h0[0] - expected).norm() < 1e-12);
    }

    #[test]
    fn rician_limits() {
        assert_eq!(rician_weights(f64::INFINITY), (1.0, 0.0));
        assert_eq!(rician_weights(0.0), (0.0, 1.0));
        let (a, _) = rician_weights(5.0);
        assert!((a * a - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn episode_is_deterministic_and_regenerable() {
        let (cfg, ant) = setup();
        let a = generate_episode(&cfg, &ant, 6, 77).unwrap();
        let b = generate_episode(&cfg, &ant, 6, 77).unwrap();
        assert_eq!(a, b);
        for s in 0..6 {
            assert_eq!(a.regenerate(s), a.slots[s]);
        }
        assert!(generate_episode(&cfg, &ant, 1, 77).is_err());
    }

    #[test]
    fn excess_delays_start_at_zero() {
        let (cfg, ant) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let dev = sample_device(&mut rng, &cfg, &ant);
        let min = dev.paths.iter().map(|p| p.excess_delay_s).fold(f64::INFINITY, f64::min);
        assert_eq!(min, 0.0);
        assert!(dev.paths.iter().all(|p| p.doppler_hz.abs() <= cfg.device_doppler_max_hz));
    }
}
