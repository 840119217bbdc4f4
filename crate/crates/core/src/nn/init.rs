use rand::Rng;

use crate::nn::tensor::Tensor;

/// Glorot/Xavier uniform bound sqrt(6/(fan_in+fan_out)).
pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Weights uniform in ±sqrt(6/(fan_in+fan_out)).
pub fn xavier_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let a = xavier_bound(fan_in, fan_out);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-a..=a)).collect();
    Tensor::new(shape.to_vec(), data).expect("xavier shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dense_four_by_four_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = xavier_uniform(&[4, 4], 4, 4, &mut rng);
        let b = (6.0f64 / 8.0).sqrt();
        assert!(t.data().iter().all(|w| w.abs() <= b));
    }

    #[test]
    fn empirical_variance_matches_glorot() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (fi, fo) = (30, 20);
        let t = xavier_uniform(&[100_000], fi, fo, &mut rng);
        let n = t.len() as f64;
        let mean = t.sum() / n;
        let var = t.data().iter().map(|w| (w - mean).powi(2)).sum::<f64>() / n;
        let target = 2.0 / (fi + fo) as f64;
        assert!((var / target - 1.0).abs() < 0.05, "var {var} target {target}");
    }
}
