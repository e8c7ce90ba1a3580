//! Compactly supported kernels and the moment constants that enter the bias
//! and variance of local linear estimators.
//!
//! Every built-in kernel is a polynomial on `[0, 1]` (extended symmetrically to
//! `[-1, 1]`), so all moment integrals are evaluated exactly by polynomial
//! arithmetic when a [`KernelSpec`] is built.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    #[default]
    Triangular,
    Uniform,
    Epanechnikov,
}

impl KernelKind {
    pub const ALL: [KernelKind; 3] = [KernelKind::Triangular, KernelKind::Uniform, KernelKind::Epanechnikov];

    /// Polynomial coefficients of the kernel restricted to `[0, 1]`, lowest degree first.
    fn half_poly(self) -> &'static [f64] {
        match self {
            KernelKind::Triangular => &[1.0, -1.0],
            KernelKind::Uniform => &[0.5],
            KernelKind::Epanechnikov => &[0.75, 0.0, -0.75],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Triangular => "triangular",
            KernelKind::Uniform => "uniform",
            KernelKind::Epanechnikov => "epanechnikov",
        }
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "triangular" => Ok(KernelKind::Triangular),
            "uniform" => Ok(KernelKind::Uniform),
            "epanechnikov" => Ok(KernelKind::Epanechnikov),
            other => Err(Error::invalid(format!("unknown kernel '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentDomain {
    TwoSided,
    OneSided,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Position {
    Interior,
    Boundary,
}

/// Moment constants of a kernel.
///
/// `mu_bar_j[j]` is the one-sided moment `∫₀¹ vʲ k(v) dv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConstants {
    pub mu2: f64,
    pub kappa0: f64,
    pub mu_bar: f64,
    pub kappa_bar: f64,
    pub mu_bar_j: [f64; 4],
}

impl KernelConstants {
    /// `μ̄₂μ̄₀ − μ̄₁²`, the determinant of the one-sided moment matrix.
    pub fn boundary_det(&self) -> f64 {
        let m = &self.mu_bar_j;
        m[2] * m[0] - m[1] * m[1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    kind: KernelKind,
    constants: KernelConstants,
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec::new(KernelKind::default())
    }
}

impl From<KernelKind> for KernelSpec {
    fn from(kind: KernelKind) -> Self {
        KernelSpec::new(kind)
    }
}

impl KernelSpec {
    pub fn new(kind: KernelKind) -> Self {
        let half = kind.half_poly();
        let mbj = [0, 1, 2, 3].map(|j| poly_moment(half, j));
        let det = mbj[2] * mbj[0] - mbj[1] * mbj[1];
        let mu_bar = (mbj[2] * mbj[2] - mbj[1] * mbj[3]) / det;
        // k(v)(μ̄₁v − μ̄₂) as a polynomial, then squared.
        let lin = poly_mul(half, &[-mbj[2], mbj[1]]);
        let kappa_bar = poly_moment(&poly_mul(&lin, &lin), 0) / (det * det);
        let constants = KernelConstants {
            mu2: 2.0 * mbj[2],
            kappa0: 2.0 * poly_moment(&poly_mul(half, half), 0),
            mu_bar,
            kappa_bar,
            mu_bar_j: mbj,
        };
        KernelSpec { kind, constants }
    }

    pub fn triangular() -> Self {
        KernelSpec::new(KernelKind::Triangular)
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn constants(&self) -> &KernelConstants {
        &self.constants
    }

    /// k(v); zero outside `[-1, 1]`.
    #[inline]
    pub fn eval(&self, v: f64) -> f64 {
        let a = v.abs();
        if a > 1.0 {
            return 0.0;
        }
        match self.kind {
            KernelKind::Triangular => 1.0 - a,
            KernelKind::Uniform => 0.5,
            KernelKind::Epanechnikov => 0.75 * (1.0 - a * a),
        }
    }

    /// Scaled kernel `k_h(v) = k(v/h)/h`.
    #[inline]
    pub fn eval_scaled(&self, v: f64, h: f64) -> f64 {
        self.eval(v / h) / h
    }

    /// ∫ vʲ k(v) dv over `[-1, 1]` or `[0, 1]`.
    pub fn moment(&self, j: u32, domain: MomentDomain) -> f64 {
        let one = poly_moment(self.kind.half_poly(), j);
        match domain {
            MomentDomain::OneSided => one,
            MomentDomain::TwoSided if j % 2 == 1 => 0.0,
            MomentDomain::TwoSided => 2.0 * one,
        }
    }

    /// Equivalent-kernel bias and variance constants `(μ, κ)` of local linear
    /// regression at an interior or boundary point.
    pub fn equivalent_constants(&self, position: Position) -> (f64, f64) {
        match position {
            Position::Interior => (self.constants.mu2, self.constants.kappa0),
            Position::Boundary => (self.constants.mu_bar, self.constants.kappa_bar),
        }
    }
}

fn poly_moment(coef: &[f64], j: u32) -> f64 {
    coef.iter()
        .enumerate()
        .map(|(m, c)| c / (m as f64 + j as f64 + 1.0))
        .sum()
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Adaptive Simpson on `[lo, hi]` with absolute tolerance `tol`.
    pub(crate) fn simpson<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64, tol: f64) -> f64 {
        fn rec<F: Fn(f64) -> f64>(
            f: &F,
            a: f64,
            b: f64,
            fa: f64,
            fm: f64,
            fb: f64,
            whole: f64,
            tol: f64,
            depth: u32,
        ) -> f64 {
            let m = 0.5 * (a + b);
            let lm = 0.5 * (a + m);
            let rm = 0.5 * (m + b);
            let flm = f(lm);
            let frm = f(rm);
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            let delta = left + right - whole;
            if depth == 0 || delta.abs() <= 15.0 * tol {
                left + right + delta / 15.0
            } else {
                rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                    + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
            }
        }
        let fa = f(lo);
        let fb = f(hi);
        let fm = f(0.5 * (lo + hi));
        let whole = (hi - lo) / 6.0 * (fa + 4.0 * fm + fb);
        rec(f, lo, hi, fa, fm, fb, whole, tol, 40)
    }

    fn quad_constants(k: &KernelSpec) -> ([f64; 4], f64, f64, f64, f64) {
        let f = |v: f64| k.eval(v);
        let mbj = [0, 1, 2, 3].map(|j| simpson(&|v: f64| v.powi(j) * f(v), 0.0, 1.0, 1e-12));
        let det = mbj[2] * mbj[0] - mbj[1] * mbj[1];
        let mu2 = simpson(&|v: f64| v * v * f(v), -1.0, 0.0, 1e-12) + simpson(&|v: f64| v * v * f(v), 0.0, 1.0, 1e-12);
        let kappa0 = simpson(&|v: f64| f(v) * f(v), -1.0, 0.0, 1e-12) + simpson(&|v: f64| f(v) * f(v), 0.0, 1.0, 1e-12);
        let mu_bar = (mbj[2] * mbj[2] - mbj[1] * mbj[3]) / det;
        let kappa_bar = simpson(&|v: f64| (f(v) * (mbj[1] * v - mbj[2])).powi(2), 0.0, 1.0, 1e-12) / (det * det);
        (mbj, mu2, kappa0, mu_bar, kappa_bar)
    }

    #[test]
    fn triangular_values() {
        let k = KernelSpec::triangular();
        assert_eq!(k.eval(0.0), 1.0);
        assert_eq!(k.eval(1.5), 0.0);
        assert_eq!(k.eval(0.5), 0.5);
        assert!((k.moment(2, MomentDomain::TwoSided) - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(k.moment(1, MomentDomain::TwoSided), 0.0);
        assert!((k.moment(3, MomentDomain::OneSided) - 1.0 / 20.0).abs() < 1e-15);
        let (mu, kappa) = k.equivalent_constants(Position::Interior);
        assert!((mu - 1.0 / 6.0).abs() < 1e-15 && (kappa - 2.0 / 3.0).abs() < 1e-15);
        let (mu, kappa) = k.equivalent_constants(Position::Boundary);
        assert!((mu + 0.1).abs() < 1e-14, "{mu}");
        assert!((kappa - 4.8).abs() < 1e-12, "{kappa}");
    }

    #[test]
    fn uniform_interior() {
        let k = KernelSpec::new(KernelKind::Uniform);
        let (mu, kappa) = k.equivalent_constants(Position::Interior);
        assert!((mu - 1.0 / 3.0).abs() < 1e-15);
        assert!((kappa - 0.5).abs() < 1e-15);
    }

    #[test]
    fn closed_forms_match_quadrature() {
        for kind in KernelKind::ALL {
            let k = KernelSpec::new(kind);
            let c = k.constants();
            let (mbj, mu2, kappa0, mu_bar, kappa_bar) = quad_constants(&k);
            for j in 0..4 {
                assert!((c.mu_bar_j[j] - mbj[j]).abs() < 1e-10, "{kind} mu_bar_{j}");
            }
            assert!((c.mu2 - mu2).abs() < 1e-10, "{kind}");
            assert!((c.kappa0 - kappa0).abs() < 1e-10, "{kind}");
            assert!((c.mu_bar - mu_bar).abs() < 1e-10, "{kind}");
            assert!((c.kappa_bar - kappa_bar).abs() < 1e-10, "{kind}");
            let total = simpson(&|v| k.eval(v), -1.0, 0.0, 1e-12) + simpson(&|v| k.eval(v), 0.0, 1.0, 1e-12);
            assert!((total - 1.0).abs() < 1e-10);
            // stored-field identity
            let m = c.mu_bar_j;
            assert!(c.boundary_det() > 0.0);
            assert_eq!(c.mu_bar, (m[2] * m[2] - m[1] * m[3]) / (m[2] * m[0] - m[1] * m[1]));
        }
    }

    #[test]
    fn symmetric_and_nonnegative() {
        for kind in KernelKind::ALL {
            let k = KernelSpec::new(kind);
            for i in -300..=300 {
                let v = i as f64 / 100.0;
                assert!(k.eval(v) >= 0.0);
                assert_eq!(k.eval(v), k.eval(-v));
                if v.abs() > 1.0 {
                    assert_eq!(k.eval(v), 0.0);
                }
            }
        }
    }

    #[test]
    fn parse_names() {
        assert_eq!("Uniform".parse::<KernelKind>().unwrap(), KernelKind::Uniform);
        assert!("gaussian".parse::<KernelKind>().is_err());
    }
}
