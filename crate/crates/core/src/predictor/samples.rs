//! Sliding-window prediction samples drawn from channel datasets.

use crate::dataset::ChannelDataset;
use crate::error::{Error, Result};
use crate::linalg::CMat;
use crate::predictor::transform::zeta;

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSample {
    pub episode: usize,
    pub slot: usize,
    /// Ĥ(t−Δt), Ĥ(t−2Δt), ..., most recent first.
    pub history: Vec<CMat>,
    /// Ĥ(t).
    pub target: CMat,
    /// H(t).
    pub truth: CMat,
}

impl PredictionSample {
    /// Real features for every history step in chronological order.
    pub fn chronological_features(&self) -> Vec<f64> {
        self.history.iter().rev().flat_map(zeta).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub w_step: usize,
    pub antennas: usize,
    pub devices: usize,
    pub samples: Vec<PredictionSample>,
}

impl SampleSet {
    /// Windows ending at the last `targets` slots of every episode, so that
    /// runs with different `w_step` share the same targets.
    pub fn from_dataset(ds: &ChannelDataset, w_step: usize, targets: usize) -> Result<Self> {
        if w_step == 0 || targets == 0 {
            return Err(Error::invalid("w_step and targets must be >= 1"));
        }
        if ds.n_slots < w_step + targets {
            return Err(Error::invalid(format!(
                "episodes have {} slots; need {} for w_step {w_step} and {targets} targets",
                ds.n_slots,
                w_step + targets
            )));
        }
        let mut samples = Vec::with_capacity(ds.episodes.len() * targets);
        for (e, ep) in ds.episodes.iter().enumerate() {
            for t in ds.n_slots - targets..ds.n_slots {
                samples.push(PredictionSample {
                    episode: e,
                    slot: t,
                    history: (1..=w_step).map(|i| ep.h_hat[t - i].clone()).collect(),
                    target: ep.h_hat[t].clone(),
                    truth: ep.h[t].clone(),
                });
            }
        }
        Ok(Self { w_step, antennas: ds.antennas(), devices: ds.devices(), samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// First `n_train` samples and the `n_test` that follow. Samples are
    /// ordered by episode, so the two parts never share an episode when the
    /// boundary falls between episodes.
    pub fn split(&self, n_train: usize, n_test: usize) -> Result<(SampleSet, SampleSet)> {
        if n_train + n_test > self.len() {
            return Err(Error::invalid(format!(
                "split {n_train}+{n_test} exceeds {} available samples",
                self.len()
            )));
        }
        let part = |r: std::ops::Range<usize>| SampleSet {
            w_step: self.w_step,
            antennas: self.antennas,
            devices: self.devices,
            samples: self.samples[r].to_vec(),
        };
        Ok((part(0..n_train), part(n_train..n_train + n_test)))
    }

    /// Training and validation portions; validation is the tail.
    pub fn validation_split(&self, fraction: f64) -> Result<(SampleSet, SampleSet)> {
        let n_val = ((self.len() as f64) * fraction).round() as usize;
        if n_val == 0 || n_val >= self.len() {
            return Err(Error::invalid(format!("validation split {fraction} leaves an empty part")));
        }
        self.split(self.len() - n_val, n_val)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SystemConfig;

    #[test]
    fn windows_are_most_recent_first() {
        let cfg = SystemConfig { antennas: 2, devices: 1, pilot_len: 2, ..SystemConfig::default() };
        let ds = ChannelDataset::generate(&cfg, 2, 6, 3).unwrap();
        let s = SampleSet::from_dataset(&ds, 3, 2).unwrap();
        assert_eq!(s.len(), 4);
        let first = &s.samples[0];
        assert_eq!(first.slot, 4);
        assert_eq!(first.history[0], ds.episodes[0].h_hat[3]);
        assert_eq!(first.history[2], ds.episodes[0].h_hat[1]);
        let feats = first.chronological_features();
        assert_eq!(&feats[..4], zeta(&ds.episodes[0].h_hat[1]).as_slice());
        let s2 = SampleSet::from_dataset(&ds, 2, 2).unwrap();
        assert_eq!(s2.samples[3].target, s.samples[3].target);
        assert!(SampleSet::from_dataset(&ds, 5, 2).is_err());
    }
}
