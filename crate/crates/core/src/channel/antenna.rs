//! Satellite antenna: Bessel beam pattern and uniform circular array response.

use std::f64::consts::PI;

use crate::channel::bessel::{j1, j3};
use crate::config::{SystemConfig, SPEED_OF_LIGHT};
use crate::error::{Error, Result};
use crate::linalg::{CVec, C64};

/// Below this argument the pattern uses its even power series in φ.
pub const SMALL_ARG: f64 = 1e-2;

/// Normalized beam pattern (J1(φ)/(2φ) + 36·J3(φ)/φ³)², equal to 1 at φ = 0.
pub fn pattern(phi: f64) -> f64 {
    let a = phi.abs();
    let amp = if a < SMALL_ARG { pattern_series(a) } else { j1(a) / (2.0 * a) + 36.0 * j3(a) / (a * a * a) };
    amp * amp
}

/// Series of J1(x)/(2x) + 36·J3(x)/x³ in x².
pub(crate) fn pattern_series(x: f64) -> f64 {
    let q = -(x / 2.0) * (x / 2.0);
    let mut t1 = 0.25; // (x/2)^0 / (4·0!·1!)
    let mut t3 = 36.0 / 48.0; // 36·(x/2)^0 / (8·0!·3!)
    let mut sum = t1 + t3;
    for k in 1..8 {
        let kf = k as f64;
        t1 *= q / (kf * (kf + 1.0));
        t3 *= q / (kf * (kf + 3.0));
        sum += t1 + t3;
    }
    sum
}

/// Argument where the pattern drops to one half, found by bisection.
pub fn half_power_arg() -> f64 {
    let (mut lo, mut hi) = (0.0f64, 3.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if pattern(mid) > 0.5 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Calibrated satellite array.
#[derive(Debug, Clone, PartialEq)]
pub struct Antenna {
    pub elements: usize,
    pub carrier_hz: f64,
    /// Array diameter d_s in metres.
    pub diameter_m: f64,
    pub peak_gain: f64,
}

impl Antenna {
    /// Solve ω(θ_3dB) = G_s/2 for the diameter at the calibration carrier.
    pub fn calibrate(cfg: &SystemConfig) -> Result<Self> {
        let theta = cfg.theta_3db();
        if !(theta > 0.0 && theta < PI / 2.0) {
            return Err(Error::Config("3 dB angle must lie in (0, 90) degrees".into()));
        }
        let phi = half_power_arg();
        let diameter = phi * SPEED_OF_LIGHT / (PI * cfg.calibration_carrier_hz * theta.sin());
        Ok(Self {
            elements: cfg.antennas,
            carrier_hz: cfg.carrier_hz,
            diameter_m: diameter,
            peak_gain: cfg.sat_gain(),
        })
    }

    /// φ = π·d_s·f_c·sin θ / c.
    pub fn phi(&self, theta: f64) -> f64 {
        PI * self.diameter_m * self.carrier_hz * theta.sin() / SPEED_OF_LIGHT
    }

    /// Transmit gain ω at off-axis angle θ.
    pub fn gain(&self, theta: f64) -> f64 {
        debug_assert!(theta.abs() < PI / 2.0);
        self.peak_gain * pattern(self.phi(theta))
    }

    /// UCA response, element m = exp(j·φ·cos(ϕ − 2πm/M)).
    pub fn steering(&self, theta: f64, azimuth: f64) -> CVec {
        steering_from_phi(self.elements, self.phi(theta), azimuth)
    }
}

pub fn steering_from_phi(m: usize, phi: f64, azimuth: f64) -> CVec {
    CVec::from_fn(m, |i, _| {
        let eta = 2.0 * PI * i as f64 / m as f64;
        C64::from_polar(1.0, phi * (azimuth - eta).cos())
    })
}
