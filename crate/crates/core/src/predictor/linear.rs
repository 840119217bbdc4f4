//! Per-entry linear-regression predictor.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CMat, C64};
use crate::predictor::samples::SampleSet;

/// Complex taps c with Ĥ_mk(t) ≈ Σ_i c_i·Ĥ_mk(t − iΔt), fitted separately for
/// every antenna/device entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearPredictor {
    pub w_step: usize,
    pub antennas: usize,
    pub devices: usize,
    /// taps[m*K + k][i]
    pub taps: Vec<Vec<C64>>,
}

impl LinearPredictor {
    /// Ridge-regularized least squares; `ridge` is relative to the mean
    /// diagonal of the Gram matrix.
    pub fn fit(train: &SampleSet, ridge: f64) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Empty("linear predictor training set"));
        }
        if !(ridge >= 0.0) {
            return Err(Error::invalid("ridge must be non-negative"));
        }
        let (w, m, k) = (train.w_step, train.antennas, train.devices);
        let mut taps = Vec::with_capacity(m * k);
        for i in 0..m {
            for j in 0..k {
                let mut gram = DMatrix::<C64>::zeros(w, w);
                let mut rhs = DVector::<C64>::zeros(w);
                for s in &train.samples {
                    let x = DVector::from_fn(w, |t, _| s.history[t][(i, j)]);
                    gram += x.conjugate() * x.transpose();
                    rhs += x.conjugate() * s.target[(i, j)];
                }
                taps.push(solve_ridge(gram, rhs, ridge)?);
            }
        }
        Ok(Self { w_step: w, antennas: m, devices: k, taps })
    }

    pub fn predict(&self, history: &[CMat]) -> Result<CMat> {
        if history.len() != self.w_step {
            return Err(Error::shape(format!("history of {}, expected {}", history.len(), self.w_step)));
        }
        if history.iter().any(|h| h.shape() != (self.antennas, self.devices)) {
            return Err(Error::shape("history matrix dims"));
        }
        Ok(CMat::from_fn(self.antennas, self.devices, |i, j| {
            let c = &self.taps[i * self.devices + j];
            history.iter().zip(c).map(|(h, c)| c * h[(i, j)]).sum()
        }))
    }
}

fn solve_ridge(gram: DMatrix<C64>, rhs: DVector<C64>, ridge: f64) -> Result<Vec<C64>> {
    let n = gram.nrows();
    let scale = gram.diagonal().iter().map(|z| z.re).sum::<f64>() / n as f64;
    if scale == 0.0 {
        return Ok(vec![C64::new(0.0, 0.0); n]);
    }
    let mut lambda = ridge * scale;
    for _ in 0..12 {
        let a = &gram + DMatrix::<C64>::identity(n, n) * C64::new(lambda, 0.0);
        if let Some(sol) = a.lu().solve(&rhs) {
            if sol.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
                return Ok(sol.iter().copied().collect());
            }
        }
        lambda = (lambda * 100.0).max(1e-12 * scale);
        log::warn!("linear predictor design is degenerate; raising ridge to {lambda:e}");
    }
    Err(Error::NonFinite("linear predictor solve".into()))
}
