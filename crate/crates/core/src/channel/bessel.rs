//! Integer-order Bessel functions of the first kind for orders 1 and 3.
//!
//! Ascending series below `SWITCH`, Hankel asymptotic expansion above.

use std::f64::consts::PI;

pub const SWITCH: f64 = 12.0;

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

fn ascending(n: usize, x: f64) -> f64 {
    let half = x / 2.0;
    let q = -half * half;
    let mut term = half.powi(n as i32) / factorial(n);
    let mut sum = term;
    for k in 1..200 {
        term *= q / (k as f64 * (k + n) as f64);
        sum += term;
        if term.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    sum
}

fn asymptotic(n: usize, x: f64) -> f64 {
    let mu = 4.0 * (n * n) as f64;
    let chi = x - (n as f64 / 2.0 + 0.25) * PI;
    let mut p = 1.0;
    let mut q = 0.0;
    let mut a = 1.0f64;
    let mut last = f64::INFINITY;
    for k in 1..60 {
        let odd = (2 * k - 1) as f64;
        let next = a * (mu - odd * odd) / (k as f64 * 8.0 * x);
        if next.abs() >= last || next == 0.0 {
            break;
        }
        a = next;
        last = a.abs();
        // k even contributes to P, k odd to Q, with alternating signs
        let sign = if (k / 2) % 2 == 0 { 1.0 } else { -1.0 };
        if k % 2 == 0 {
            p += sign * a;
        } else {
            q += sign * a;
        }
        if a.abs() < 1e-17 {
            break;
        }
    }
    (2.0 / (PI * x)).sqrt() * (p * chi.cos() - q * chi.sin())
}

/// J_n(x) for n in {1, 3} (any non-negative integer works).
pub fn bessel_j(n: usize, x: f64) -> f64 {
    let ax = x.abs();
    let v = if ax < SWITCH { ascending(n, ax) } else { asymptotic(n, ax) };
    if x < 0.0 && n % 2 == 1 {
        -v
    } else {
        v
    }
}

pub fn j1(x: f64) -> f64 {
    bessel_j(1, x)
}

pub fn j3(x: f64) -> f64 {
    bessel_j(3, x)
}
