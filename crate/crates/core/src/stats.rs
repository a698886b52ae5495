//! Small statistics helpers: Kolmogorov-Smirnov tests, reference spacing laws
//! and low-order polynomial least squares.

use std::f64::consts::PI;

use statrs::function::erf::erf;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Kolmogorov survival function `Q(x) = 2 sum_k (-1)^(k-1) exp(-2 k^2 x^2)`.
pub fn kolmogorov_q(x: f64) -> f64 {
    if x < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = f64::from(k);
        let term = (-2.0 * kf * kf * x * x).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample KS test of `sample` against `cdf`, with Stephens' small-sample
/// correction of the asymptotic p-value.
pub fn ks_test(sample: &[f64], cdf: impl Fn(f64) -> f64) -> KsResult {
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / n).max((i as f64 + 1.0) / n - f);
    }
    let sn = n.sqrt();
    KsResult {
        statistic: d,
        p_value: kolmogorov_q((sn + 0.12 + 0.11 / sn) * d),
    }
}

/// CDF of the Poisson spacing law `exp(-s)`.
pub fn poisson_cdf(s: f64) -> f64 {
    if s <= 0.0 {
        0.0
    } else {
        -(-s).exp_m1()
    }
}

/// CDF of the unitary (beta = 2) Wigner surmise `(32/pi^2) s^2 exp(-4 s^2/pi)`.
pub fn wigner_unitary_cdf(s: f64) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    let a = 4.0 / PI;
    erf(a.sqrt() * s) - 2.0 * (a / PI).sqrt() * s * (-a * s * s).exp()
}

pub fn wigner_unitary_pdf(s: f64) -> f64 {
    if s < 0.0 {
        return 0.0;
    }
    32.0 / (PI * PI) * s * s * (-4.0 * s * s / PI).exp()
}

/// Least-squares polynomial of degree 1 or 2, coefficients lowest order first.
pub fn polyfit(x: &[f64], y: &[f64], degree: usize) -> Option<Vec<f64>> {
    assert!(degree == 1 || degree == 2, "only degrees 1 and 2 are supported");
    let n = x.len();
    if n != y.len() || n <= degree {
        return None;
    }
    // centre and scale the abscissa for conditioning
    let mean = x.iter().sum::<f64>() / n as f64;
    let half = x.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
    if half == 0.0 {
        return None;
    }
    let z: Vec<f64> = x.iter().map(|v| (v - mean) / half).collect();
    let m = degree + 1;
    let mut a = vec![vec![0.0; m + 1]; m];
    for (zi, yi) in z.iter().zip(y) {
        let pows: Vec<f64> = (0..m).map(|p| zi.powi(p as i32)).collect();
        for r in 0..m {
            for c in 0..m {
                a[r][c] += pows[r] * pows[c];
            }
            a[r][m] += pows[r] * yi;
        }
    }
    let b = solve_augmented(a)?;
    // expand p(z) with z = (x - mean) / half into powers of x
    let s = 1.0 / half;
    let mut out = vec![0.0; m];
    match degree {
        1 => {
            out[1] = b[1] * s;
            out[0] = b[0] - b[1] * s * mean;
        }
        _ => {
            out[2] = b[2] * s * s;
            out[1] = b[1] * s - 2.0 * b[2] * s * s * mean;
            out[0] = b[0] - b[1] * s * mean + b[2] * s * s * mean * mean;
        }
    }
    Some(out)
}

fn solve_augmented(mut a: Vec<Vec<f64>>) -> Option<Vec<f64>> {
    let m = a.len();
    for col in 0..m {
        let piv = (col..m).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        for r in col + 1..m {
            let f = a[r][col] / a[col][col];
            for c in col..=m {
                a[r][c] -= f * a[col][c];
            }
        }
    }
    let mut x = vec![0.0; m];
    for r in (0..m).rev() {
        let s: f64 = (r + 1..m).map(|c| a[r][c] * x[c]).sum();
        x[r] = (a[r][m] - s) / a[r][r];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kolmogorov_reference_points() {
        // tabulated critical values of the Kolmogorov distribution
        assert!((kolmogorov_q(1.3581) - 0.05).abs() < 1e-4);
        assert!((kolmogorov_q(1.6276) - 0.01).abs() < 1e-4);
    }

    #[test]
    fn ks_accepts_matching_and_rejects_wrong_law() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u: Vec<f64> = (0..2000).map(|_| rng.random::<f64>()).collect();
        let good = ks_test(&u, |x| x.clamp(0.0, 1.0));
        assert!(good.p_value > 0.01);
        let bad = ks_test(&u, |x| (x * x).clamp(0.0, 1.0));
        assert!(bad.p_value < 1e-6);
    }

    #[test]
    fn wigner_cdf_is_integral_of_pdf() {
        let h = 1e-4;
        let mut acc = 0.0;
        let mut s = 0.0;
        while s < 3.0 {
            acc += h * (wigner_unitary_pdf(s) + wigner_unitary_pdf(s + h)) / 2.0;
            s += h;
        }
        assert!((acc - wigner_unitary_cdf(s)).abs() < 1e-7);
        assert!((wigner_unitary_cdf(50.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn polyfit_recovers_exact_polynomials() {
        let x: Vec<f64> = (1..40).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|t| 0.5 - 0.3 * t + 0.01 * t * t).collect();
        let c = polyfit(&x, &y, 2).unwrap();
        assert!((c[0] - 0.5).abs() < 1e-10);
        assert!((c[1] + 0.3).abs() < 1e-12);
        assert!((c[2] - 0.01).abs() < 1e-14);
        let y1: Vec<f64> = x.iter().map(|t| 2.0 - 0.7 * t).collect();
        let c1 = polyfit(&x, &y1, 1).unwrap();
        assert!((c1[1] + 0.7).abs() < 1e-13);
        assert!(polyfit(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0], 1).is_none());
    }
}
