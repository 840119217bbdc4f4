//! Held-out evaluation of predictors and precoders.

use rayon::prelude::*;

use crate::augment::ErrorSet;
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::harness::metrics::MetricsRow;
use crate::linalg::CMat;
use crate::precoder::{augment_channels, sinr, sinr_all, wsr};
use crate::rng::{rng_for, stream};

#[derive(Debug, Clone, PartialEq)]
pub struct PrecodingEval {
    /// Mean weighted sum rate on the true channels.
    pub wsr: f64,
    /// Per-device outage over held-out error draws around the predictions.
    pub outage: Vec<f64>,
    /// Per-device outage on the true channels.
    pub outage_true: Vec<f64>,
}

impl PrecodingEval {
    pub fn rows(&self, scheme: &str, seed: u64) -> Vec<MetricsRow> {
        let mut rows = vec![MetricsRow::new(scheme, "WSR", self.wsr, seed)];
        for (k, o) in self.outage.iter().enumerate() {
            rows.push(MetricsRow::new(scheme, format!("outage_{k}"), *o, seed));
        }
        for (k, o) in self.outage_true.iter().enumerate() {
            rows.push(MetricsRow::new(scheme, format!("outage_true_{k}"), *o, seed));
        }
        let worst = self.outage.iter().cloned().fold(0.0, f64::max);
        rows.push(MetricsRow::new(scheme, "outage_max", worst, seed));
        rows
    }
}

/// Evaluate precoders `ws[i]` computed from `h_tilde[i]`. Error draws depend
/// only on (seed, sample index), so every scheme sees the same draws.
pub fn evaluate_precoding(
    cfg: &SystemConfig,
    ws: &[CMat],
    h_true: &[CMat],
    h_tilde: &[CMat],
    xi: &CMat,
    heldout: &ErrorSet,
    draws: usize,
    seed: u64,
) -> Result<PrecodingEval> {
    let n = ws.len();
    if n == 0 {
        return Err(Error::Empty("precoders to evaluate"));
    }
    if h_true.len() != n || h_tilde.len() != n {
        return Err(Error::shape("precoders, true and predicted channels differ in count"));
    }
    let k = cfg.devices;
    let alpha = cfg.weights_vec();
    let gamma = cfg.thresholds_vec();
    let noise = cfg.noise_var();
    let per_sample: Vec<Result<(f64, Vec<usize>, Vec<bool>)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let rate = wsr(&h_true[i], &ws[i], &alpha, noise)?;
            let true_out = sinr_all(&h_true[i], &ws[i], noise).iter().zip(&gamma).map(|(g, t)| g <= t).collect();
            let mut rng = rng_for(seed, stream::EVAL, i as u64);
            let sets = augment_channels(&h_tilde[i], xi, heldout, draws, &mut rng)?;
            let hits = sets
                .iter()
                .enumerate()
                .map(|(dev, hs)| hs.iter().filter(|h| sinr(h, &ws[i], dev, noise) <= gamma[dev]).count())
                .collect();
            Ok((rate, hits, true_out))
        })
        .collect();
    let mut total = 0.0;
    let mut hits = vec![0usize; k];
    let mut true_hits = vec![0usize; k];
    for r in per_sample {
        let (rate, h, t) = r?;
        total += rate;
        for dev in 0..k {
            hits[dev] += h[dev];
            true_hits[dev] += t[dev] as usize;
        }
    }
    Ok(PrecodingEval {
        wsr: total / n as f64,
        outage: hits.iter().map(|h| *h as f64 / (n * draws) as f64).collect(),
        outage_true: true_hits.iter().map(|h| *h as f64 / n as f64).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Provenance;
    use crate::linalg::{CVec, C64};
    use crate::precoder::zfbf;

    #[test]
    fn perfect_csi_zero_forcing() {
        let cfg = SystemConfig { antennas: 4, devices: 2, tx_power_dbw: 20.0, sinr_threshold_db: -100.0, ..SystemConfig::default() };
        let hs: Vec<CMat> = (0..5).map(|s| CMat::from_fn(4, 2, |i, j| C64::new(((s + i * 2 + j) as f64).sin(), (j as f64 - i as f64).cos()))).collect();
        let ws: Vec<CMat> = hs.iter().map(|h| zfbf(h, cfg.tx_power()).unwrap().0).collect();
        let zero = ErrorSet::new(Provenance::None, 0, cfg.clone(), vec![CVec::zeros(4)]).unwrap();
        let e = evaluate_precoding(&cfg, &ws, &hs, &hs, &CMat::identity(4, 4), &zero, 3, 1).unwrap();
        assert_eq!(e.outage, vec![0.0, 0.0]);
        assert_eq!(e.outage_true, vec![0.0, 0.0]);
        let want: f64 = hs.iter().zip(&ws).map(|(h, w)| wsr(h, w, &[1.0, 1.0], cfg.noise_var()).unwrap()).sum::<f64>() / 5.0;
        assert!((e.wsr - want).abs() < 1e-12);
    }
}
