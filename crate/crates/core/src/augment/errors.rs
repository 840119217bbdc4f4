//! Channel error sets: estimation errors, learned or Gaussian prediction
//! errors, and their composition.

use std::io::Write;
use std::path::Path;

use rand::Rng;

use crate::config::SystemConfig;
use crate::dataset::{expect_eof, read_c64, read_header, write_c64, write_header, FileKind, Provenance};
use crate::error::{Error, Result};
use crate::linalg::{crandn_vec, psd_sqrt, CMat, CVec};
use crate::rng::{rng_for, stream};

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSet {
    pub provenance: Provenance,
    pub seed: u64,
    pub config: SystemConfig,
    pub errors: Vec<CVec>,
}

impl ErrorSet {
    pub fn new(provenance: Provenance, seed: u64, config: SystemConfig, errors: Vec<CVec>) -> Result<Self> {
        let m = config.antennas;
        if errors.iter().any(|e| e.len() != m) {
            return Err(Error::shape(format!("error vectors must have {m} entries")));
        }
        if errors.iter().any(|e| e.iter().any(|z| !(z.re.is_finite() && z.im.is_finite()))) {
            return Err(Error::NonFinite("error set".into()));
        }
        Ok(Self { provenance, seed, config, errors })
    }

    pub fn antennas(&self) -> usize {
        self.config.antennas
    }

    pub fn len(&self) -> usize {
        self.errors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.errors.is_empty()
    }

    /// Mean power per entry, E|e_m|².
    pub fn entry_power(&self) -> f64 {
        if self.errors.is_empty() {
            return 0.0;
        }
        let total: f64 = self.errors.iter().map(|e| e.norm_squared()).sum();
        total / (self.errors.len() * self.antennas()) as f64
    }

    /// Sample covariance (1/N)·Σ e eᴴ.
    pub fn covariance(&self) -> Result<CMat> {
        if self.errors.is_empty() {
            return Err(Error::Empty("error set"));
        }
        let m = self.antennas();
        let mut c = CMat::zeros(m, m);
        for e in &self.errors {
            c += e * e.adjoint();
        }
        Ok(c / crate::linalg::C64::new(self.errors.len() as f64, 0.0))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        let m = self.antennas();
        write_header(&mut w, FileKind::ErrorSet, self.provenance, &self.config, self.seed, m, 1, self.len(), 1)?;
        for e in &self.errors {
            for z in e.iter() {
                write_c64(&mut w, *z)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        let hdr = read_header(&mut r)?;
        if hdr.kind != FileKind::ErrorSet {
            return Err(Error::Format("file holds a channel dataset, not an error set".into()));
        }
        if hdr.m != hdr.config.antennas {
            return Err(Error::Format("header dims disagree with embedded config".into()));
        }
        let mut errors = Vec::with_capacity(hdr.count);
        for _ in 0..hdr.count {
            let mut v = CVec::zeros(hdr.m);
            for z in v.iter_mut() {
                *z = read_c64(&mut r)?;
            }
            errors.push(v);
        }
        expect_eof(&mut r)?;
        Self::new(hdr.provenance, hdr.seed, hdr.config, errors)
    }

    pub fn export_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["index", "antenna", "re", "im"])?;
        for (i, e) in self.errors.iter().enumerate() {
            for (m, z) in e.iter().enumerate() {
                w.write_record(&[i.to_string(), m.to_string(), z.re.to_string(), z.im.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Estimation errors e_1 ~ CN(0, σ_0²/(P_1·M·L)·I).
pub fn estimation_error_set(cfg: &SystemConfig, n: usize, seed: u64) -> Result<ErrorSet> {
    let mut rng = rng_for(seed, stream::ESTIMATION_ERRORS, 0);
    let v = cfg.estimation_error_var();
    let errors = (0..n).map(|_| crandn_vec(&mut rng, cfg.antennas, v)).collect();
    ErrorSet::new(Provenance::Estimation, seed, cfg.clone(), errors)
}

/// n draws from CN(0, cov).
pub fn gaussian_error_set(cfg: &SystemConfig, cov: &CMat, n: usize, seed: u64) -> Result<ErrorSet> {
    if cov.shape() != (cfg.antennas, cfg.antennas) {
        return Err(Error::shape("covariance must be MxM"));
    }
    let l = psd_sqrt(cov)?;
    let mut rng = rng_for(seed, stream::GAUSSIAN, 0);
    let errors = (0..n).map(|_| &l * crandn_vec(&mut rng, cfg.antennas, 1.0)).collect();
    ErrorSet::new(Provenance::Gaussian, seed, cfg.clone(), errors)
}

/// e = e_1 + ξ·e_2. When `n` equals |S_1|·|S_2| the full cross product is
/// emitted in order (e_1 index outer); otherwise `n` pairs are drawn
/// uniformly with replacement.
pub fn compose_error_set(s1: &ErrorSet, s2: &ErrorSet, xi: &CMat, n: usize, seed: u64) -> Result<ErrorSet> {
    if s1.is_empty() || s2.is_empty() {
        return Err(Error::Empty("error set to compose"));
    }
    let m = s1.antennas();
    if s2.antennas() != m || xi.shape() != (m, m) {
        return Err(Error::shape(format!("compose needs {m}-vectors and an {m}x{m} xi")));
    }
    let mapped: Vec<CVec> = s2.errors.iter().map(|e| xi * e).collect();
    let errors = if n == s1.len() * s2.len() {
        s1.errors.iter().flat_map(|a| mapped.iter().map(move |b| a + b)).collect()
    } else {
        let mut rng = rng_for(seed, stream::COMPOSE, 0);
        (0..n)
            .map(|_| {
                let i = rng.gen_range(0..s1.len());
                let j = rng.gen_range(0..s2.len());
                &s1.errors[i] + &mapped[j]
            })
            .collect()
    };
    ErrorSet::new(Provenance::Composed, seed, s1.config.clone(), errors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::C64;

    fn cfg() -> SystemConfig {
        SystemConfig { antennas: 3, devices: 2, pilot_len: 4, ..SystemConfig::default() }
    }

    #[test]
    fn zero_covariance_gives_zero_set() {
        let s = gaussian_error_set(&cfg(), &CMat::zeros(3, 3), 10, 1).unwrap();
        assert!(s.errors.iter().all(|e| e.norm() == 0.0));
        assert!(gaussian_error_set(&cfg(), &(-CMat::identity(3, 3)), 1, 1).is_err());
    }

    #[test]
    fn gaussian_covariance_recovered() {
        let a = CMat::from_fn(3, 3, |i, j| C64::new((i + j) as f64 * 0.3, i as f64 - j as f64));
        let cov = &a * a.adjoint() + CMat::identity(3, 3);
        let s = gaussian_error_set(&cfg(), &cov, 100_000, 5).unwrap();
        let err = (s.covariance().unwrap() - &cov).norm() / cov.norm();
        assert!(err < 0.1, "{err}");
    }

    #[test]
    fn estimation_errors_match_law() {
        let c = cfg();
        let s = estimation_error_set(&c, 50_000, 2).unwrap();
        let v = c.estimation_error_var();
        assert!((s.entry_power() / v - 1.0).abs() < 0.03);
    }

    #[test]
    fn composition_identities() {
        let c = cfg();
        let s1 = estimation_error_set(&c, 5, 1).unwrap();
        let zero = ErrorSet::new(Provenance::None, 0, c.clone(), vec![CVec::zeros(3)]).unwrap();
        let eye = CMat::identity(3, 3);
        assert_eq!(compose_error_set(&s1, &zero, &eye, 5, 0).unwrap().errors, s1.errors);
        assert_eq!(compose_error_set(&zero, &s1, &eye, 5, 0).unwrap().errors, s1.errors);
        let sampled = compose_error_set(&s1, &s1, &eye, 7, 3).unwrap();
        assert_eq!(sampled.len(), 7);
        assert_eq!(sampled, compose_error_set(&s1, &s1, &eye, 7, 3).unwrap());
        assert!(compose_error_set(&s1, &zero, &CMat::identity(2, 2), 5, 0).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let s = estimation_error_set(&cfg(), 17, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.bin");
        s.save(&p).unwrap();
        assert_eq!(ErrorSet::load(&p).unwrap(), s);
        assert!(crate::dataset::ChannelDataset::load(&p).is_err());
    }
}
