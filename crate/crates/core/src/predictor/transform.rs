//! Complex/real conversions, standardization and error metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{frob_sq, CMat, C64};

/// ζ: stack [Re H; Im H] into a real 2M×K matrix, row-major.
pub fn zeta(h: &CMat) -> Vec<f64> {
    let (m, k) = h.shape();
    let mut out = vec![0.0; 2 * m * k];
    for i in 0..m {
        for j in 0..k {
            out[i * k + j] = h[(i, j)].re;
            out[(m + i) * k + j] = h[(i, j)].im;
        }
    }
    out
}

/// Inverse of [`zeta`].
pub fn zeta_inv(x: &[f64], m: usize, k: usize) -> Result<CMat> {
    if x.len() != 2 * m * k {
        return Err(Error::shape(format!("expected {} reals for {m}x{k}, got {}", 2 * m * k, x.len())));
    }
    Ok(CMat::from_fn(m, k, |i, j| C64::new(x[i * k + j], x[(m + i) * k + j])))
}

/// ‖reference − estimate‖_F² / ‖reference‖_F².
pub fn nmse(reference: &CMat, estimate: &CMat) -> Result<f64> {
    if reference.shape() != estimate.shape() {
        return Err(Error::shape("nmse operands differ in shape"));
    }
    let den = frob_sq(reference);
    if den == 0.0 {
        return Err(Error::invalid("nmse reference is the zero matrix"));
    }
    Ok(frob_sq(&(reference - estimate)) / den)
}

pub fn to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// e_2 = Ĥ − H̃.
pub fn prediction_error(h_hat: &CMat, h_tilde: &CMat) -> Result<CMat> {
    if h_hat.shape() != h_tilde.shape() {
        return Err(Error::shape("prediction error operands differ in shape"));
    }
    Ok(h_hat - h_tilde)
}

/// Per-dimension affine standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn identity(n: usize) -> Self {
        Self { mean: vec![0.0; n], std: vec![1.0; n] }
    }

    pub fn fit<'a, I: IntoIterator<Item = &'a [f64]>>(rows: I) -> Result<Self> {
        let mut it = rows.into_iter().peekable();
        let n = it.peek().ok_or(Error::Empty("standardizer rows"))?.len();
        let mut sum = vec![0.0; n];
        let mut sq = vec![0.0; n];
        let mut count = 0usize;
        for r in it {
            if r.len() != n {
                return Err(Error::shape("standardizer rows differ in length"));
            }
            for (i, v) in r.iter().enumerate() {
                sum[i] += v;
                sq[i] += v * v;
            }
            count += 1;
        }
        let c = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / c).collect();
        let pooled = sq.iter().sum::<f64>() / (c * n as f64);
        let floor = (1e-12 * pooled).sqrt().max(f64::MIN_POSITIVE);
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| (s / c - m * m).max(0.0).sqrt().max(floor))
            .collect();
        Ok(Self { mean, std })
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn apply(&self, x: &mut [f64]) {
        for (i, v) in x.iter_mut().enumerate() {
            let j = i % self.mean.len();
            *v = (*v - self.mean[j]) / self.std[j];
        }
    }

    pub fn invert(&self, x: &mut [f64]) {
        for (i, v) in x.iter_mut().enumerate() {
            let j = i % self.mean.len();
            *v = *v * self.std[j] + self.mean[j];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeta_examples() {
        let h = CMat::from_element(1, 1, C64::new(0.0, 1.0));
        assert_eq!(zeta(&h), vec![0.0, 1.0]);
        let h = CMat::from_fn(3, 2, |i, j| C64::new(i as f64 - j as f64, 0.0));
        let z = zeta(&h);
        assert!(z[6..].iter().all(|v| *v == 0.0));
        assert_eq!(zeta_inv(&z, 3, 2).unwrap(), h);
    }

    #[test]
    fn nmse_examples() {
        let h = CMat::from_fn(2, 2, |i, j| C64::new(1.0 + i as f64, j as f64));
        assert_eq!(nmse(&h, &h).unwrap(), 0.0);
        assert_eq!(nmse(&h, &CMat::zeros(2, 2)).unwrap(), 1.0);
        assert!((nmse(&h, &(h.clone() * C64::new(2.0, 0.0))).unwrap() - 1.0).abs() < 1e-15);
        assert!(nmse(&CMat::zeros(2, 2), &h).is_err());
    }

    #[test]
    fn prediction_error_reconstructs() {
        let a = CMat::from_fn(2, 3, |i, j| C64::new(i as f64, j as f64));
        let b = CMat::from_fn(2, 3, |i, j| C64::new(j as f64, 0.5 * i as f64));
        let e = prediction_error(&a, &b).unwrap();
        assert_eq!(e + &b, a);
        assert_eq!(prediction_error(&a, &a).unwrap(), CMat::zeros(2, 3));
    }

    #[test]
    fn standardizer_round_trip() {
        let rows = [vec![1.0, 10.0], vec![3.0, 30.0], vec![5.0, 20.0]];
        let s = Standardizer::fit(rows.iter().map(|r| r.as_slice())).unwrap();
        let mut x = vec![3.0, 20.0, 5.0, 30.0];
        s.apply(&mut x);
        assert!(x[0].abs() < 1e-15 && x[1].abs() < 1e-15);
        s.invert(&mut x);
        assert!((x[2] - 5.0).abs() < 1e-12 && (x[3] - 30.0).abs() < 1e-12);
    }
}
