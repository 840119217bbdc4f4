//! Outage-penalized rate loss over augmented channel sets, with its
//! analytic gradient.

use rand::Rng;
use rayon::prelude::*;

use crate::augment::ErrorSet;
use crate::error::{Error, Result};
use crate::linalg::{CMat, CVec, C64};
use crate::precoder::metrics::quantile_rank;

/// Per-device weights, SINR thresholds (linear), penalty weights and outage
/// levels, plus the receiver noise power.
#[derive(Debug, Clone, PartialEq)]
pub struct LossSpec {
    pub alpha: Vec<f64>,
    pub gamma: Vec<f64>,
    pub mu: Vec<f64>,
    pub eps: Vec<f64>,
    pub noise: f64,
}

impl LossSpec {
    pub fn devices(&self) -> usize {
        self.alpha.len()
    }

    fn check(&self, k: usize) -> Result<()> {
        if [self.gamma.len(), self.mu.len(), self.eps.len()].iter().any(|&n| n != self.alpha.len()) || self.alpha.len() != k {
            return Err(Error::shape(format!("loss spec must have {k} entries per device")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossReport {
    /// Mean over augmented channels of Σ α_k log2(1 + Γ_k).
    pub wsr_term: f64,
    pub quantiles: Vec<f64>,
    /// max(γ_k − Q_k, 0).
    pub penalties: Vec<f64>,
    pub total: f64,
}

/// S_h for each device: ξ·h̃_k + e with `n` errors drawn uniformly from the set.
pub fn augment_channels<R: Rng + ?Sized>(h_tilde: &CMat, xi: &CMat, errors: &ErrorSet, n: usize, rng: &mut R) -> Result<Vec<Vec<CVec>>> {
    if errors.is_empty() {
        return Err(Error::Empty("error set"));
    }
    let m = h_tilde.nrows();
    if xi.shape() != (m, m) || errors.antennas() != m {
        return Err(Error::shape("augmentation dims"));
    }
    Ok((0..h_tilde.ncols())
        .map(|k| {
            let base = xi * h_tilde.column(k);
            (0..n).map(|_| &base + &errors.errors[rng.gen_range(0..errors.len())]).collect()
        })
        .collect())
}

/// Loss of one precoder over `channels[k][n]`, the selected order-statistic
/// index per device, and the gradient in packed real layout.
///
/// With `frozen` set, the given indices are used instead of re-sorting.
pub fn penalty_loss(w: &CMat, channels: &[Vec<CVec>], spec: &LossSpec, frozen: Option<&[usize]>) -> Result<(LossReport, Vec<usize>, Vec<f64>)> {
    let (m, k) = w.shape();
    spec.check(k)?;
    if channels.len() != k {
        return Err(Error::shape("one channel set per device required"));
    }
    let mut report = LossReport::default();
    let mut selected = Vec::with_capacity(k);
    let mut g = vec![C64::new(0.0, 0.0); m * k];
    let mut a = vec![C64::new(0.0, 0.0); k];
    for (dev, hs) in channels.iter().enumerate() {
        if hs.is_empty() {
            return Err(Error::Empty("augmented channel set"));
        }
        let n = hs.len();
        let mut gammas = Vec::with_capacity(n);
        let mut dev_rate = 0.0;
        for h in hs {
            let (s, d) = sinr_parts(h, w, dev, spec.noise, &mut a);
            let gm = s / d;
            gammas.push(gm);
            dev_rate += (1.0 + gm).log2();
        }
        report.wsr_term += spec.alpha[dev] * dev_rate / n as f64;
        let sel = match frozen {
            Some(f) => *f.get(dev).ok_or_else(|| Error::shape("frozen selection length"))?,
            None => {
                let mut order: Vec<usize> = (0..n).collect();
                let r = quantile_rank(n, spec.eps[dev]);
                order.select_nth_unstable_by(r, |&x, &y| gammas[x].total_cmp(&gammas[y]).then(x.cmp(&y)));
                order[r]
            }
        };
        let q = gammas[sel];
        let pen = (spec.gamma[dev] - q).max(0.0);
        report.quantiles.push(q);
        report.penalties.push(pen);
        selected.push(sel);

        let rate_coef = -spec.alpha[dev] / (n as f64 * std::f64::consts::LN_2);
        for (i, h) in hs.iter().enumerate() {
            let (s, d) = sinr_parts(h, w, dev, spec.noise, &mut a);
            let gm = s / d;
            let mut dgamma = rate_coef / (1.0 + gm);
            if i == sel && pen > 0.0 {
                dgamma -= spec.mu[dev];
            }
            if dgamma == 0.0 {
                continue;
            }
            for j in 0..k {
                let dabs = if j == dev { 1.0 / d } else { -s / (d * d) };
                let c = 2.0 * dgamma * dabs;
                let coef = a[j] * c;
                for (r, hv) in h.iter().enumerate() {
                    g[j * m + r] += coef * hv;
                }
            }
        }
    }
    let penalty: f64 = report.penalties.iter().zip(&spec.mu).map(|(p, mu)| p * mu).sum();
    report.total = -report.wsr_term + penalty;
    let mut grad = vec![0.0; 2 * m * k];
    for (i, z) in g.iter().enumerate() {
        grad[i] = z.re;
        grad[m * k + i] = z.im;
    }
    Ok((report, selected, grad))
}

/// (|a_kk|², Σ_{j≠k}|a_kj|² + σ²) with a_kj = hᴴw_j written into `a`.
fn sinr_parts(h: &CVec, w: &CMat, k: usize, noise: f64, a: &mut [C64]) -> (f64, f64) {
    let mut s = 0.0;
    let mut d = noise;
    for (j, aj) in a.iter_mut().enumerate() {
        *aj = h.dotc(&w.column(j));
        if j == k {
            s = aj.norm_sqr();
        } else {
            d += aj.norm_sqr();
        }
    }
    (s, d)
}

/// Mean loss over a batch and per-sample gradients scaled by 1/B, evaluated
/// in parallel with results kept in input order.
pub fn batch_penalty_loss(ws: &[CMat], channels: &[Vec<Vec<CVec>>], spec: &LossSpec) -> Result<(f64, Vec<LossReport>, Vec<f64>)> {
    if ws.is_empty() || ws.len() != channels.len() {
        return Err(Error::shape("batch precoders and channel sets differ in count"));
    }
    let parts: Vec<Result<(LossReport, Vec<usize>, Vec<f64>)>> =
        ws.par_iter().zip(channels.par_iter()).map(|(w, ch)| penalty_loss(w, ch, spec, None)).collect();
    let b = ws.len() as f64;
    let mut total = 0.0;
    let mut reports = Vec::with_capacity(ws.len());
    let mut grad = Vec::with_capacity(ws.len() * ws[0].len() * 2);
    for p in parts {
        let (r, _, g) = p?;
        total += r.total;
        grad.extend(g.into_iter().map(|v| v / b));
        reports.push(r);
    }
    Ok((total / b, reports, grad))
}
