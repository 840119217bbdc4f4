//! Pilot transmission and MMSE channel estimation.

use std::f64::consts::PI;

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{crandn_vec, inverse, min_eigenvalue_hermitian, CMat, CVec, C64};

/// Normalized pilot matrix X ∈ C^{L×M} with XᴴX = I.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotConfig {
    pub len: usize,
    pub power: f64,
    pub x: CMat,
}

impl PilotConfig {
    /// First M columns of the unitary L-point DFT.
    pub fn dft(len: usize, antennas: usize, power: f64) -> Result<Self> {
        if len < antennas {
            return Err(Error::invalid(format!("pilot length {len} < {antennas} antennas")));
        }
        let s = 1.0 / (len as f64).sqrt();
        let x = CMat::from_fn(len, antennas, |i, j| {
            C64::from_polar(s, -2.0 * PI * ((i * j) % len) as f64 / len as f64)
        });
        Ok(Self { len, power, x })
    }

    pub fn antennas(&self) -> usize {
        self.x.ncols()
    }

    /// sqrt(P_1·M·L).
    pub fn amplitude(&self) -> f64 {
        (self.power * self.antennas() as f64 * self.len as f64).sqrt()
    }

    /// Variance σ_0²/(P_1·M·L) of the residual estimation error.
    pub fn error_var(&self, noise_var: f64) -> f64 {
        noise_var / (self.power * self.antennas() as f64 * self.len as f64)
    }
}

/// y = sqrt(P_1·M·L)·X·h + n with n ~ CN(0, σ_0² I).
pub fn receive_pilot<R: Rng + ?Sized>(h: &CVec, pc: &PilotConfig, noise_var: f64, rng: &mut R) -> CVec {
    let clean = &pc.x * h * C64::new(pc.amplitude(), 0.0);
    if noise_var == 0.0 {
        return clean;
    }
    clean + crandn_vec(rng, pc.len, noise_var)
}

/// Least-squares observation (XᴴX)⁻¹Xᴴy / sqrt(P_1·M·L) = h + noise.
pub fn ls_observation(y: &CVec, pc: &PilotConfig) -> Result<CVec> {
    let xh = pc.x.adjoint();
    let gram = &xh * &pc.x;
    let inv = inverse(&gram)?;
    Ok(inv * xh * y / C64::new(pc.amplitude(), 0.0))
}

/// Sample covariance (1/N)·Σ h hᴴ plus a ridge of 1e-9·trace/M.
pub fn empirical_autocorrelation<'a, I>(samples: I) -> Result<CMat>
where
    I: IntoIterator<Item = &'a CVec>,
{
    let mut it = samples.into_iter().peekable();
    let m = it.peek().ok_or(Error::Empty("channel history"))?.len();
    let mut r = CMat::zeros(m, m);
    let mut n = 0usize;
    for h in it {
        if h.len() != m {
            return Err(Error::shape("channel samples of different lengths"));
        }
        r += h * h.adjoint();
        n += 1;
    }
    r /= C64::new(n as f64, 0.0);
    let ridge = 1e-9 * r.trace().re / m as f64;
    let ridge = if ridge > 0.0 { ridge } else { 1e-300 };
    for i in 0..m {
        r[(i, i)] += ridge;
    }
    Ok(r)
}

/// MMSE estimate of one channel vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateBundle {
    pub h_hat: CVec,
    /// ξ = (R + vI)·R⁻¹ so that h = ξ·ĥ + e_1.
    pub xi: CMat,
    /// v = σ_0²/(P_1·M·L); e_1 ~ CN(0, vI).
    pub error_var: f64,
}

/// Precomputed MMSE filter for a fixed correlation matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MmseEstimator {
    pub r: CMat,
    pub error_var: f64,
    /// R·(R + vI)⁻¹
    pub filter: CMat,
    pub xi: CMat,
    /// True when R had to be regularized before inversion.
    pub regularized: bool,
}

impl MmseEstimator {
    pub fn new(r: &CMat, error_var: f64) -> Result<Self> {
        if !r.is_square() {
            return Err(Error::shape("correlation matrix must be square"));
        }
        let m = r.nrows();
        let mut r = r.clone();
        let mut regularized = false;
        let scale = (r.trace().re / m as f64).abs().max(f64::MIN_POSITIVE);
        let lmin = min_eigenvalue_hermitian(&r);
        if !(lmin > 1e-12 * scale) {
            let ridge = 1e-9 * scale - lmin.min(0.0);
            log::warn!("correlation matrix is near singular (min eigenvalue {lmin:e}); adding ridge {ridge:e}");
            for i in 0..m {
                r[(i, i)] += ridge;
            }
            regularized = true;
        }
        let eye = CMat::identity(m, m);
        let rv = &r + &eye * C64::new(error_var, 0.0);
        let filter = &r * inverse(&rv)?;
        let xi = &rv * inverse(&r)?;
        Ok(Self { r, error_var, filter, xi, regularized })
    }

    pub fn estimate_from_observation(&self, y_ls: &CVec) -> CVec {
        &self.filter * y_ls
    }
}

/// ĥ = R(R + vI)⁻¹·ỹ from the received pilot y, with v = σ_0²/(P_1·M·L).
pub fn mmse_estimate(y: &CVec, pc: &PilotConfig, r: &CMat, noise_var: f64) -> Result<EstimateBundle> {
    let est = MmseEstimator::new(r, pc.error_var(noise_var))?;
    let obs = ls_observation(y, pc)?;
    Ok(EstimateBundle { h_hat: est.estimate_from_observation(&obs), xi: est.xi, error_var: est.error_var })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dft_pilot_is_orthonormal() {
        let pc = PilotConfig::dft(8, 5, 10.0).unwrap();
        let g = pc.x.adjoint() * &pc.x;
        assert!((g - CMat::identity(5, 5)).norm() < 1e-12);
        assert!(PilotConfig::dft(4, 5, 1.0).is_err());
    }

    #[test]
    fn noiseless_pilot() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pc = PilotConfig::dft(8, 4, 10.0).unwrap();
        let h = crandn_vec(&mut rng, 4, 1.0);
        let y = receive_pilot(&h, &pc, 0.0, &mut rng);
        let want = &pc.x * &h * C64::new((10.0f64 * 4.0 * 8.0).sqrt(), 0.0);
        assert!((y - want).norm() < 1e-12);
    }

    #[test]
    fn identity_correlation_gives_scaled_xi() {
        let v = 0.03;
        let est = MmseEstimator::new(&CMat::identity(3, 3), v).unwrap();
        assert!((est.xi.clone() - CMat::identity(3, 3) * C64::new(1.0 + v, 0.0)).norm() < 1e-12);
        assert!(!est.regularized);
    }

    #[test]
    fn singular_correlation_is_regularized() {
        let h = CVec::from_element(3, C64::new(1.0, 0.0));
        let r = &h * h.adjoint();
        let est = MmseEstimator::new(&r, 1e-3).unwrap();
        assert!(est.regularized);
        assert!(est.xi.iter().all(|z| z.re.is_finite()));
    }

    #[test]
    fn autocorrelation_of_white_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let samples: Vec<CVec> = (0..10_000).map(|_| crandn_vec(&mut rng, 4, 1.0)).collect();
        let r = empirical_autocorrelation(&samples).unwrap();
        let err = (r - CMat::identity(4, 4)).norm() / 2.0;
        assert!(err < 0.05, "{err}");
        assert!(empirical_autocorrelation(std::iter::empty::<&CVec>()).is_err());
    }

    #[test]
    fn repeated_sample_is_rank_one_plus_ridge() {
        let h = CVec::from_vec(vec![C64::new(1.0, 1.0), C64::new(0.0, -2.0)]);
        let r = empirical_autocorrelation(std::iter::repeat_n(&h, 5)).unwrap();
        let tr = h.norm_squared();
        let lmin = min_eigenvalue_hermitian(&r);
        assert!((lmin - 1e-9 * tr / 2.0).abs() < 1e-12);
    }
}
