//! Standard normal helpers and the two-sided joint critical value.

use statrs::distribution::{Continuous, ContinuousCDF, Normal};

fn std_normal() -> Normal {
    Normal::standard()
}

pub fn pdf(x: f64) -> f64 {
    std_normal().pdf(x)
}

pub fn cdf(x: f64) -> f64 {
    std_normal().cdf(x)
}

pub fn quantile(p: f64) -> f64 {
    std_normal().inverse_cdf(p)
}

/// Two-sided `1 − α` quantile, `Φ⁻¹(1 − α/2)`.
pub fn z_two_sided(alpha: f64) -> f64 {
    quantile(1.0 - alpha / 2.0)
}

/// `P(|Z₁| ≤ c, |Z₂| ≤ c)` for standard bivariate normals with correlation `rho`.
pub fn square_prob(c: f64, rho: f64) -> f64 {
    if c <= 0.0 {
        return 0.0;
    }
    let rho = rho.clamp(-1.0, 1.0);
    if 1.0 - rho.abs() < 1e-12 {
        return 2.0 * cdf(c) - 1.0;
    }
    let s = (1.0 - rho * rho).sqrt();
    let f = |z: f64| pdf(z) * (cdf((c - rho * z) / s) - cdf((-c - rho * z) / s));
    // composite Simpson; the integrand is smooth on [-c, c]
    let m = 4000;
    let h = 2.0 * c / m as f64;
    let mut acc = f(-c) + f(c);
    for k in 1..m {
        let z = -c + k as f64 * h;
        acc += if k % 2 == 1 { 4.0 } else { 2.0 } * f(z);
    }
    (acc * h / 3.0).clamp(0.0, 1.0)
}

/// Smallest `c` with `P(|Z₁| ≤ c, |Z₂| ≤ c) ≥ 1 − alpha`.
pub fn joint_critical_value(rho: f64, alpha: f64) -> f64 {
    let target = 1.0 - alpha;
    let mut lo = z_two_sided(alpha);
    // Šidák bound is an upper bound for any correlation
    let mut hi = z_two_sided(1.0 - (1.0 - alpha).sqrt()) + 1e-9;
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if square_prob(mid, rho) >= target {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    hi
}
