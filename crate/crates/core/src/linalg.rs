use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

/// One CN(0, var) draw.
pub fn crandn<R: Rng + ?Sized>(rng: &mut R, var: f64) -> C64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(s * re, s * im)
}

pub fn crandn_vec<R: Rng + ?Sized>(rng: &mut R, n: usize, var: f64) -> CVec {
    CVec::from_fn(n, |_, _| crandn(rng, var))
}

pub fn frob_sq(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum()
}

/// Inverse of a square complex matrix, failing on singularity.
pub fn inverse(m: &CMat) -> Result<CMat> {
    if !m.is_square() {
        return Err(Error::shape(format!("inverse of {}x{} matrix", m.nrows(), m.ncols())));
    }
    m.clone()
        .try_inverse()
        .filter(|inv| inv.iter().all(|z| z.re.is_finite() && z.im.is_finite()))
        .ok_or_else(|| Error::invalid("matrix is singular"))
}

/// Smallest eigenvalue of a Hermitian matrix.
pub fn min_eigenvalue_hermitian(m: &CMat) -> f64 {
    let h = (m + m.adjoint()) * C64::new(0.5, 0.0);
    h.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Lower Cholesky-like factor L with L·Lᴴ = m for a PSD Hermitian matrix,
/// computed from the eigendecomposition so that semidefinite inputs work.
pub fn psd_sqrt(m: &CMat) -> Result<CMat> {
    let h = (m + m.adjoint()) * C64::new(0.5, 0.0);
    let eig = h.symmetric_eigen();
    let scale = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
    let lmin = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if lmin < -1e-10 * scale {
        return Err(Error::NotPsd(lmin));
    }
    let d = CMat::from_diagonal(&eig.eigenvalues.map(|l| C64::new(l.max(0.0).sqrt(), 0.0)));
    Ok(&eig.eigenvectors * d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psd_sqrt_reconstructs() {
        let a = CMat::from_row_slice(2, 2, &[C64::new(2.0, 0.0), C64::new(0.5, 0.5), C64::new(0.5, -0.5), C64::new(1.0, 0.0)]);
        let l = psd_sqrt(&a).unwrap();
        let back = &l * l.adjoint();
        assert!((back - a).norm() < 1e-12);
    }

    #[test]
    fn psd_sqrt_rejects_indefinite() {
        let a = CMat::from_row_slice(2, 2, &[C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(-1.0, 0.0)]);
        assert!(matches!(psd_sqrt(&a), Err(Error::NotPsd(_))));
    }
}
