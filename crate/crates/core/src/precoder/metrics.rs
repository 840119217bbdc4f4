//! SINR, weighted sum rate, quantiles, power normalization and the
//! zero-forcing baseline.

use crate::error::{Error, Result};
use crate::linalg::{inverse, CMat, CVec, C64};

/// Γ_k = |h_kᴴw_k|² / (Σ_{j≠k} |h_kᴴw_j|² + σ²).
pub fn sinr(h: &CVec, w: &CMat, k: usize, noise: f64) -> f64 {
    let mut signal = 0.0;
    let mut interf = 0.0;
    for j in 0..w.ncols() {
        let a = h.dotc(&w.column(j)).norm_sqr();
        if j == k {
            signal = a;
        } else {
            interf += a;
        }
    }
    signal / (interf + noise)
}

/// Γ_k for every device, using column k of H as h_k.
pub fn sinr_all(h: &CMat, w: &CMat, noise: f64) -> Vec<f64> {
    (0..h.ncols()).map(|k| sinr(&h.column(k).into_owned(), w, k, noise)).collect()
}

/// Σ α_k·log2(1 + Γ_k).
pub fn wsr(h: &CMat, w: &CMat, alpha: &[f64], noise: f64) -> Result<f64> {
    if h.shape() != w.shape() || alpha.len() != h.ncols() {
        return Err(Error::shape("wsr dims"));
    }
    Ok(sinr_all(h, w, noise).iter().zip(alpha).map(|(g, a)| a * (1.0 + g).log2()).sum())
}

/// Position of the ⌈ε·N⌉-th smallest element (0-based).
pub fn quantile_rank(n: usize, eps: f64) -> usize {
    ((eps * n as f64).ceil() as usize).clamp(1, n) - 1
}

/// Lower empirical ε-quantile: the ⌈ε·N⌉-th smallest value.
pub fn empirical_quantile(values: &[f64], eps: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("quantile values"));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::invalid(format!("quantile level {eps} outside (0,1)")));
    }
    let mut v = values.to_vec();
    let r = quantile_rank(v.len(), eps);
    let (_, q, _) = v.select_nth_unstable_by(r, f64::total_cmp);
    Ok(*q)
}

/// Complex M×K precoder from the packed real vector
/// [Re w_1; ...; Re w_K; Im w_1; ...; Im w_K].
pub fn unpack_precoder(x: &[f64], m: usize, k: usize) -> Result<CMat> {
    if x.len() != 2 * m * k {
        return Err(Error::shape(format!("precoder vector of {} for {m}x{k}", x.len())));
    }
    Ok(CMat::from_fn(m, k, |i, j| C64::new(x[j * m + i], x[m * k + j * m + i])))
}

pub fn pack_precoder(w: &CMat) -> Vec<f64> {
    let (m, k) = w.shape();
    let mut x = vec![0.0; 2 * m * k];
    for j in 0..k {
        for i in 0..m {
            x[j * m + i] = w[(i, j)].re;
            x[m * k + j * m + i] = w[(i, j)].im;
        }
    }
    x
}

/// Scale onto the sphere Σ‖w_k‖² = P_2. A zero input maps to the uniform
/// vector; the flag reports that fallback.
pub fn lambda_power(x: &[f64], power: f64, m: usize, k: usize) -> Result<(CMat, bool)> {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let radius = power.sqrt();
    let (scaled, fallback): (Vec<f64>, bool) = if norm > 0.0 && norm.is_finite() {
        (x.iter().map(|v| v * radius / norm).collect(), false)
    } else {
        let u = radius / (x.len() as f64).sqrt();
        (vec![u; x.len()], true)
    };
    Ok((unpack_precoder(&scaled, m, k)?, fallback))
}

pub fn total_power(w: &CMat) -> f64 {
    w.iter().map(|z| z.norm_sqr()).sum()
}

/// W ∝ H(HᴴH)⁻¹ with every column at power P_2/K. Falls back to a ridge
/// pseudo-inverse when HᴴH is ill conditioned; the flag reports that.
pub fn zfbf(h: &CMat, power: f64) -> Result<(CMat, bool)> {
    let (m, k) = h.shape();
    if k > m {
        return Err(Error::invalid(format!("zero forcing needs K <= M, got K={k}, M={m}")));
    }
    let gram = h.adjoint() * h;
    let scale = gram.diagonal().iter().map(|z| z.re).sum::<f64>() / k as f64;
    if !(scale > 0.0) {
        return Err(Error::invalid("zero forcing on a zero channel"));
    }
    let cond_ok = crate::linalg::min_eigenvalue_hermitian(&gram) > 1e-12 * scale;
    let (inv, regularized) = match (cond_ok, inverse(&gram)) {
        (true, Ok(inv)) => (inv, false),
        _ => {
            log::warn!("zero forcing: rank-deficient channel, using ridge pseudo-inverse");
            (inverse(&(gram + CMat::identity(k, k) * C64::new(1e-6 * scale, 0.0)))?, true)
        }
    };
    let mut w = h * inv;
    let per = (power / k as f64).sqrt();
    for mut col in w.column_iter_mut() {
        let n = col.norm();
        if n > 0.0 {
            col *= C64::new(per / n, 0.0);
        }
    }
    Ok((w, regularized))
}

/// Fraction of `channels` (vectors for one device) with Γ_k ≤ γ.
pub fn empirical_outage(w: &CMat, k: usize, channels: &[CVec], gamma: f64, noise: f64) -> Result<f64> {
    if channels.is_empty() {
        return Err(Error::Empty("outage channel set"));
    }
    let hits = channels.iter().filter(|h| sinr(h, w, k, noise) <= gamma).count();
    Ok(hits as f64 / channels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn sinr_examples() {
        let h = CVec::from_vec(vec![c(1.0, 0.0), c(0.0, 0.0)]);
        let w = CMat::from_column_slice(2, 1, &[c(2.0, 0.0), c(0.0, 0.0)]);
        assert_eq!(sinr(&h, &w, 0, 1.0), 4.0);
        assert_eq!(sinr(&h, &CMat::zeros(2, 1), 0, 1.0), 0.0);
        let w2 = CMat::from_column_slice(2, 2, &[c(2.0, 1.0), c(0.0, 0.0), c(0.0, 0.0), c(5.0, 0.0)]);
        assert!((sinr(&h, &w2, 0, 0.5) - 5.0 / 0.5).abs() < 1e-12);
    }

    #[test]
    fn wsr_examples() {
        let h = CMat::from_element(1, 1, c(3f64.sqrt(), 0.0));
        let w = CMat::from_element(1, 1, c(1.0, 0.0));
        assert!((wsr(&h, &w, &[1.0], 1.0).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(wsr(&h, &CMat::zeros(1, 1), &[1.0], 1.0).unwrap(), 0.0);
    }

    #[test]
    fn quantile_examples() {
        assert_eq!(empirical_quantile(&[5.0, 5.0, 5.0], 0.1).unwrap(), 5.0);
        let v: Vec<f64> = (1..=100).rev().map(f64::from).collect();
        assert_eq!(empirical_quantile(&v, 0.05).unwrap(), 5.0);
        for e in [0.01, 0.5, 0.99] {
            assert_eq!(empirical_quantile(&[2.5], e).unwrap(), 2.5);
        }
        assert!(empirical_quantile(&[], 0.1).is_err());
        assert!(empirical_quantile(&[1.0], 1.0).is_err());
    }

    #[test]
    fn packing_round_trip() {
        let w = CMat::from_fn(3, 2, |i, j| c(i as f64, 10.0 + j as f64));
        let x = pack_precoder(&w);
        assert_eq!(x[3], 0.0);
        assert_eq!(x[6], 10.0);
        assert_eq!(unpack_precoder(&x, 3, 2).unwrap(), w);
    }

    #[test]
    fn lambda_examples() {
        let x = vec![3.0, 0.0, 0.0, 4.0];
        let (w, fb) = lambda_power(&x, 2.0, 1, 2).unwrap();
        assert!(!fb);
        assert!((total_power(&w) - 2.0).abs() < 1e-12);
        assert!((w[(0, 0)].re / w[(0, 1)].im - 0.75).abs() < 1e-12);
        let unit: Vec<f64> = x.iter().map(|v| v / 5.0 * 2f64.sqrt()).collect();
        let (w2, _) = lambda_power(&unit, 2.0, 1, 2).unwrap();
        assert!((pack_precoder(&w2).iter().zip(&unit).map(|(a, b)| (a - b).abs()).sum::<f64>()) < 1e-15);
        let (w0, fb) = lambda_power(&[0.0; 4], 2.0, 1, 2).unwrap();
        assert!(fb && (total_power(&w0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zfbf_identity_channel() {
        let h = CMat::identity(2, 2);
        let (w, reg) = zfbf(&h, 2.0).unwrap();
        assert!(!reg);
        assert!((w.clone() - CMat::identity(2, 2)).norm() < 1e-12);
        assert_eq!(sinr_all(&h, &w, 1.0), vec![1.0, 1.0]);
        assert!((wsr(&h, &w, &[1.0, 1.0], 1.0).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zfbf_nulls_interference() {
        let h = CMat::from_fn(4, 3, |i, j| c(((i * 3 + j) as f64).sin(), ((i + 2 * j) as f64).cos()));
        let (w, _) = zfbf(&h, 5.0).unwrap();
        assert!((total_power(&w) / 5.0 - 1.0).abs() < 1e-12);
        for j in 0..3 {
            for k in 0..3 {
                if j != k {
                    assert!(h.column(j).dotc(&w.column(k)).norm() < 1e-9);
                }
            }
        }
        let rank1 = CMat::from_fn(3, 2, |i, _| c(i as f64 + 1.0, 0.0));
        assert!(zfbf(&rank1, 1.0).unwrap().1);
    }

    #[test]
    fn outage_examples() {
        let w = CMat::identity(2, 2);
        let hs: Vec<CVec> = (1..=10).map(|s| CVec::from_vec(vec![c(s as f64, 0.0), c(0.0, 0.0)])).collect();
        assert_eq!(empirical_outage(&w, 0, &hs, 0.5, 1.0).unwrap(), 0.0);
        assert_eq!(empirical_outage(&w, 0, &hs, 1e3, 1.0).unwrap(), 1.0);
        let brute = hs.iter().filter(|h| h[0].norm_sqr() <= 20.0).count() as f64 / 10.0;
        assert_eq!(empirical_outage(&w, 0, &hs, 20.0, 1.0).unwrap(), brute);
    }
}
