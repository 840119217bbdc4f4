//! Inference wall-time measurements.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::{Robustness, RunConfig};
use crate::error::{Error, Result};
use crate::harness::metrics::MetricsRow;
use crate::harness::spec::Scheme;
use crate::linalg::{crandn, CMat, C64};
use crate::precoder::{zfbf, Dlpcn, DlpcnArch};
use crate::predictor::{Dlpdn, DlpdnArch, LinearPredictor, Standardizer};
use crate::rng::{rng_for, stream};

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "LEOSAT_THREADS";

pub const MIN_CALLS: usize = 30;
const WARMUP: usize = 3;

/// Sizes the global rayon pool from `LEOSAT_THREADS` when set.
/// Returns the thread count in effect.
pub fn init_threads() -> Result<usize> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v.trim().parse().map_err(|_| Error::Config(format!("{THREADS_ENV}={v} is not a thread count")))?;
        if n == 0 {
            return Err(Error::Config(format!("{THREADS_ENV} must be >= 1")));
        }
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(rayon::current_num_threads())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub scheme: String,
    pub antennas: usize,
    pub devices: usize,
    pub calls: usize,
    pub median_ms: f64,
}

impl TimingRow {
    pub fn metrics_row(&self, seed: u64) -> MetricsRow {
        let mut r = MetricsRow::new(&self.scheme, "wall_time_ms", self.median_ms, seed);
        r.axis = "M".into();
        r.axis_value = Some(self.antennas as f64);
        r
    }
}

pub fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn time_calls<F: FnMut() -> Result<()>>(calls: usize, mut f: F) -> Result<f64> {
    for _ in 0..WARMUP {
        f()?;
    }
    let mut ms = Vec::with_capacity(calls);
    for _ in 0..calls {
        let t = Instant::now();
        f()?;
        ms.push(t.elapsed().as_secs_f64() * 1e3);
    }
    Ok(median(&mut ms))
}

/// Median single-instance inference time of `scheme` for each antenna count
/// in `sizes`, with K taken from the config (capped at M). Learned schemes
/// use freshly initialised networks of the right shape; weights do not
/// change the cost of a forward pass.
pub fn time_scheme(cfg: &RunConfig, scheme: Scheme, sizes: &[usize], calls: usize, seed: u64) -> Result<Vec<TimingRow>> {
    let calls = calls.max(MIN_CALLS);
    let mut rows = Vec::new();
    for (i, &m) in sizes.iter().enumerate() {
        let k = cfg.system.devices.min(m);
        let mut sys = cfg.system.clone();
        sys.antennas = m;
        sys.devices = k;
        let mut rng = rng_for(seed, stream::EVAL, i as u64);
        let mut draw = || CMat::from_fn(m, k, |_, _| crandn(&mut rng, 1.0));
        let w = cfg.predictor.w_step;
        let history: Vec<CMat> = (0..w).map(|_| draw()).collect();
        let h = draw();
        let median_ms = match scheme {
            Scheme::Dlpdn => {
                let arch = DlpdnArch::from_hyper(&cfg.predictor, m, k);
                let net = Dlpdn::new(arch.clone(), Standardizer::identity(arch.frame_len()), seed)?;
                time_calls(calls, || net.predict(&history).map(|_| ()))?
            }
            Scheme::Lr => {
                let lr = LinearPredictor {
                    w_step: w,
                    antennas: m,
                    devices: k,
                    taps: vec![vec![C64::new(1.0 / w as f64, 0.0); w]; m * k],
                };
                time_calls(calls, || lr.predict(&history).map(|_| ()))?
            }
            Scheme::Zfbf => time_calls(calls, || zfbf(&h, sys.tx_power()).map(|_| ()))?,
            s => {
                let mut hyper = cfg.precoder.clone();
                hyper.mlp_only = s == Scheme::Mlp;
                let net = Dlpcn::new(DlpcnArch::from_hyper(&hyper, &sys), seed, Robustness::Vae)?;
                time_calls(calls, || net.precode(&h).map(|_| ()))?
            }
        };
        rows.push(TimingRow { scheme: scheme.name().to_string(), antennas: m, devices: k, calls, median_ms });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_odd_and_even() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 3.0, 2.0]), 2.5);
    }

    #[test]
    fn zfbf_timing_rows() {
        let cfg = RunConfig::desk();
        let rows = time_scheme(&cfg, Scheme::Zfbf, &[8, 16], 30, 1).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.median_ms > 0.0 && r.calls == 30));
        assert_eq!(rows[1].devices, 4);
    }
}
