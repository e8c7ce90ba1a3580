//! Kernel-weighted local polynomial least squares at a point.
//!
//! The normal equations are formed in the centered and scaled covariate
//! `u = (x − x0)/h`, which keeps the `(p+1) × (p+1)` systems well conditioned.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::linalg;
use crate::sample::{EvalSide, Sample};

/// Relative pivot threshold of the scaled normal equations.
const PIVOT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalFit {
    pub x0: f64,
    pub h: f64,
    pub order: usize,
    /// Polynomial coefficients in powers of `x − x0`; `beta[j]` estimates the
    /// j-th derivative divided by `j!`.
    pub beta: Vec<f64>,
    /// Linear-smoother weights of the intercept, one per observation.
    pub weights: Vec<f64>,
    /// Outcome minus fitted polynomial; zero outside the window.
    pub residuals: Vec<f64>,
    pub n_eff: usize,
    /// `Σ |w_i| (x_i − x0)²`.
    pub abs_weighted_sq_dist: f64,
}

impl LocalFit {
    pub fn intercept(&self) -> f64 {
        self.beta[0]
    }

    /// Eicker-Huber-White variance of the intercept, `Σ w_i² û_i²`.
    pub fn ehw_variance(&self) -> f64 {
        ehw_variance(self)
    }

    pub fn worstcase_bias(&self, m: f64) -> f64 {
        worstcase_bias(self, m)
    }
}

/// Weighted least squares fit of a degree-`p` polynomial in `x − x0` to
/// `outcome`, using observations on `side` with weights `k_h(x_i − x0)`.
pub fn local_poly_fit(
    sample: &Sample,
    outcome: &[f64],
    x0: f64,
    h: f64,
    p: usize,
    kernel: &KernelSpec,
    side: EvalSide,
) -> Result<LocalFit> {
    if outcome.len() != sample.len() {
        return Err(Error::invalid("outcome length differs from sample size"));
    }
    fit_poly(sample.x(), outcome, None, x0, h, p, kernel, side)
}

/// `Σ w_i² û_i²`.
pub fn ehw_variance(fit: &LocalFit) -> f64 {
    fit.weights.iter().zip(&fit.residuals).map(|(w, u)| w * w * u * u).sum()
}

/// Worst-case conditional bias of the intercept of a local linear fit over
/// functions whose first-order Taylor remainder at `x0` is bounded by
/// `(M/2)(x − x0)²`: `(M/2) Σ |w_i| (x_i − x0)²`.
pub fn worstcase_bias(fit: &LocalFit, m: f64) -> f64 {
    0.5 * m * fit.abs_weighted_sq_dist
}

/// General local polynomial fit on slices. `keep` optionally drops rows.
#[allow(clippy::too_many_arguments)]
pub(crate) fn fit_poly(
    x: &[f64],
    y: &[f64],
    keep: Option<&[bool]>,
    x0: f64,
    h: f64,
    p: usize,
    kernel: &KernelSpec,
    side: EvalSide,
) -> Result<LocalFit> {
    check_bandwidth(h)?;
    let d = p + 1;
    let n = x.len();
    let mut window = Vec::new();
    for i in 0..n {
        if keep.is_some_and(|k| !k[i]) || !side.admits(x[i], x0) {
            continue;
        }
        let u = (x[i] - x0) / h;
        let k = kernel.eval(u) / h;
        if k > 0.0 {
            window.push((i, u, k));
        }
    }
    if window.is_empty() {
        return Err(Error::EmptyWindow);
    }
    if count_distinct(window.iter().map(|w| x[w.0]), d) < d {
        return Err(Error::RankDeficient { needed: d });
    }
    let mut a = vec![0.0; d * d];
    let mut b = vec![0.0; d];
    let mut pw = vec![0.0; 2 * d - 1];
    for &(i, u, k) in &window {
        let mut t = k;
        for item in pw.iter_mut() {
            *item += t;
            t *= u;
        }
        let mut t = k * y[i];
        for item in b.iter_mut() {
            *item += t;
            t *= u;
        }
    }
    for r in 0..d {
        for c in 0..d {
            a[r * d + c] = pw[r + c];
        }
    }
    let gamma = linalg::solve(&a, &b, d, PIVOT_TOL).ok_or(Error::RankDeficient { needed: d })?;
    let mut e0 = vec![0.0; d];
    e0[0] = 1.0;
    let row = linalg::solve(&a, &e0, d, PIVOT_TOL).ok_or(Error::RankDeficient { needed: d })?;

    let mut weights = vec![0.0; n];
    let mut residuals = vec![0.0; n];
    let mut abs_sq = 0.0;
    for &(i, u, k) in &window {
        let (mut zr, mut fitted, mut t) = (0.0, 0.0, 1.0);
        for j in 0..d {
            zr += row[j] * t;
            fitted += gamma[j] * t;
            t *= u;
        }
        let w = k * zr;
        weights[i] = w;
        residuals[i] = y[i] - fitted;
        abs_sq += w.abs() * (x[i] - x0).powi(2);
    }
    let beta = gamma.iter().enumerate().map(|(j, g)| g / h.powi(j as i32)).collect();
    Ok(LocalFit {
        x0,
        h,
        order: p,
        beta,
        weights,
        residuals,
        n_eff: window.len(),
        abs_weighted_sq_dist: abs_sq,
    })
}

/// Summary of a local linear fit without per-observation vectors; the hot
/// path of bandwidth searches and simulations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct LinearSmooth {
    pub intercept: f64,
    pub slope: f64,
    pub ehw_var: f64,
    pub abs_weighted_sq_dist: f64,
    pub n_eff: usize,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn local_linear(
    x: &[f64],
    y: &[f64],
    keep: Option<&[bool]>,
    x0: f64,
    h: f64,
    kernel: &KernelSpec,
    side: EvalSide,
) -> Result<LinearSmooth> {
    check_bandwidth(h)?;
    let (mut s0, mut s1, mut s2, mut t0, mut t1) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut n_eff = 0usize;
    let admitted = |i: usize| keep.is_none_or(|k| k[i]) && side.admits(x[i], x0);
    for i in 0..x.len() {
        if !admitted(i) {
            continue;
        }
        let u = (x[i] - x0) / h;
        let k = kernel.eval(u);
        if k > 0.0 {
            n_eff += 1;
            lo = lo.min(x[i]);
            hi = hi.max(x[i]);
            let ku = k * u;
            s0 += k;
            s1 += ku;
            s2 += ku * u;
            t0 += k * y[i];
            t1 += ku * y[i];
        }
    }
    if n_eff == 0 {
        return Err(Error::EmptyWindow);
    }
    let det = s0 * s2 - s1 * s1;
    if lo >= hi || det <= PIVOT_TOL * s0 * s2 {
        return Err(Error::RankDeficient { needed: 2 });
    }
    let a = (s2 * t0 - s1 * t1) / det;
    let b = (s0 * t1 - s1 * t0) / det;
    let (mut ehw, mut abs_sq) = (0.0, 0.0);
    for i in 0..x.len() {
        if !admitted(i) {
            continue;
        }
        let u = (x[i] - x0) / h;
        let k = kernel.eval(u);
        if k > 0.0 {
            let w = k * (s2 - s1 * u) / det;
            let r = y[i] - a - b * u;
            ehw += w * w * r * r;
            abs_sq += w.abs() * (x[i] - x0).powi(2);
        }
    }
    Ok(LinearSmooth {
        intercept: a,
        slope: b / h,
        ehw_var: ehw,
        abs_weighted_sq_dist: abs_sq,
        n_eff,
    })
}

/// Nearest-neighbour variance estimates `J/(J+1) (v_i − mean of v over the J
/// nearest neighbours of x_i)²` for the rows listed in `order`, which must
/// be sorted by `x`. Rows not listed get zero.
pub(crate) fn nn_variance(x: &[f64], v: &[f64], order: &[usize], j: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    let m = order.len();
    if m <= j {
        return out;
    }
    let factor = j as f64 / (j as f64 + 1.0);
    for p in 0..m {
        let i = order[p];
        let (mut l, mut r) = (p, p + 1);
        let mut acc = 0.0;
        for _ in 0..j {
            let take_left = if l == 0 {
                false
            } else if r >= m {
                true
            } else {
                x[i] - x[order[l - 1]] <= x[order[r]] - x[i]
            };
            if take_left {
                l -= 1;
                acc += v[order[l]];
            } else {
                acc += v[order[r]];
                r += 1;
            }
        }
        let d = v[i] - acc / j as f64;
        out[i] = factor * d * d;
    }
    out
}

/// Replaces each listed value by the mean over listed rows within
/// `half_width` in `x`; `order` must be sorted by `x`.
pub(crate) fn box_smooth(x: &[f64], v: &[f64], order: &[usize], half_width: f64) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    let m = order.len();
    let mut prefix = Vec::with_capacity(m + 1);
    prefix.push(0.0);
    for &i in order {
        prefix.push(prefix.last().copied().unwrap_or(0.0) + v[i]);
    }
    let (mut lo, mut hi) = (0usize, 0usize);
    for p in 0..m {
        let xi = x[order[p]];
        while x[order[lo]] < xi - half_width {
            lo += 1;
        }
        while hi < m && x[order[hi]] <= xi + half_width {
            hi += 1;
        }
        out[order[p]] = (prefix[hi] - prefix[lo]) / (hi - lo) as f64;
    }
    out
}

/// `(Σ w_i² σ²_i, Σ |w_i| (x_i − x0)²)` for the intercept weights `w` of a local
/// linear fit.
#[allow(clippy::too_many_arguments)]
pub(crate) fn local_linear_proxy(
    x: &[f64],
    keep: Option<&[bool]>,
    x0: f64,
    h: f64,
    kernel: &KernelSpec,
    side: EvalSide,
    sigma2: &[f64],
) -> Result<(f64, f64)> {
    check_bandwidth(h)?;
    let admitted = |i: usize| keep.is_none_or(|k| k[i]) && side.admits(x[i], x0);
    let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut any = false;
    for i in 0..x.len() {
        if !admitted(i) {
            continue;
        }
        let u = (x[i] - x0) / h;
        let k = kernel.eval(u);
        if k > 0.0 {
            any = true;
            lo = lo.min(x[i]);
            hi = hi.max(x[i]);
            s0 += k;
            s1 += k * u;
            s2 += k * u * u;
        }
    }
    if !any {
        return Err(Error::EmptyWindow);
    }
    let det = s0 * s2 - s1 * s1;
    if lo >= hi || det <= PIVOT_TOL * s0 * s2 {
        return Err(Error::RankDeficient { needed: 2 });
    }
    let (mut var, mut abs_sq) = (0.0, 0.0);
    for i in 0..x.len() {
        if !admitted(i) {
            continue;
        }
        let u = (x[i] - x0) / h;
        let k = kernel.eval(u);
        if k > 0.0 {
            let w = k * (s2 - s1 * u) / det;
            var += w * w * sigma2[i];
            abs_sq += w.abs() * (x[i] - x0).powi(2);
        }
    }
    Ok((var, abs_sq))
}

pub(crate) fn check_bandwidth(h: f64) -> Result<()> {
    if h.is_finite() && h > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "bandwidth must be positive and finite, got {h}"
        )))
    }
}

/// Number of distinct values, counting at most `cap`.
pub(crate) fn count_distinct(values: impl Iterator<Item = f64>, cap: usize) -> usize {
    let mut seen: Vec<f64> = Vec::with_capacity(cap);
    for v in values {
        if !seen.contains(&v) {
            seen.push(v);
            if seen.len() >= cap {
                break;
            }
        }
    }
    seen.len()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_smooth_by_hand() {
        let x = [0.0, 0.5, 1.0, 3.0];
        let v = [1.0, 2.0, 6.0, 4.0];
        let order = [0, 1, 2, 3];
        let got = box_smooth(&x, &v, &order, 0.6);
        assert_eq!(got, vec![1.5, 3.0, 4.0, 4.0]);
    }

    #[test]
    fn nn_variance_by_hand() {
        let x = [0.0, 1.0, 3.0, 3.5, 10.0];
        let v = [1.0, 2.0, 4.0, 0.0, 5.0];
        let order: Vec<usize> = (0..5).collect();
        let got = nn_variance(&x, &v, &order, 2);
        // neighbours: 0→{1,2}, 1→{0,2}, 2→{3,1}, 3→{2,1}, 4→{3,2}
        let want = [
            (1.0f64 - 3.0).powi(2),
            (2.0f64 - 2.5).powi(2),
            (4.0f64 - 1.0).powi(2),
            (0.0f64 - 3.0).powi(2),
            (5.0f64 - 2.0).powi(2),
        ];
        for (g, w) in got.iter().zip(want) {
            assert!((g - w * 2.0 / 3.0).abs() < 1e-12);
        }
    }
    use crate::kernels::{KernelKind, Position};
    use proptest::prelude::*;

    fn five() -> Vec<f64> {
        vec![-1.0, -0.5, 0.0, 0.5, 1.0]
    }

    fn fit(x: &[f64], y: &[f64], x0: f64, h: f64, p: usize) -> LocalFit {
        let s = Sample::new(x.to_vec(), y.to_vec()).unwrap();
        local_poly_fit(&s, y, x0, h, p, &KernelSpec::triangular(), EvalSide::TwoSided).unwrap()
    }

    /// Brute-force weighted least squares with raw (unscaled) x and an
    /// explicit 2×2 inverse.
    fn oracle_ll(x: &[f64], y: &[f64], x0: f64, h: f64) -> (f64, Vec<f64>) {
        let k: Vec<f64> = x.iter().map(|xi| (1.0 - ((xi - x0) / h).abs()).max(0.0) / h).collect();
        let (mut a, mut b, mut c, mut r0, mut r1) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for i in 0..x.len() {
            let d = x[i] - x0;
            a += k[i];
            b += k[i] * d;
            c += k[i] * d * d;
            r0 += k[i] * y[i];
            r1 += k[i] * d * y[i];
        }
        let det = a * c - b * b;
        let w = (0..x.len()).map(|i| k[i] * (c - b * (x[i] - x0)) / det).collect();
        ((c * r0 - b * r1) / det, w)
    }

    #[test]
    fn reproduces_a_line() {
        let x = five();
        let y: Vec<f64> = x.iter().map(|v| 1.0 + v).collect();
        let f = fit(&x, &y, 0.0, 2.0, 1);
        assert!((f.beta[0] - 1.0).abs() < 1e-14 && (f.beta[1] - 1.0).abs() < 1e-14);
        assert!(f.residuals.iter().all(|r| r.abs() < 1e-14));
    }

    #[test]
    fn constant_outcome() {
        let x = five();
        let f = fit(&x, &[3.5; 5], 0.2, 1.3, 1);
        assert!((f.beta[0] - 3.5).abs() < 1e-14 && f.beta[1].abs() < 1e-13);
    }

    #[test]
    fn quadratic_on_five_points_matches_oracle() {
        let x = five();
        let y: Vec<f64> = x.iter().map(|v| v * v).collect();
        let f = fit(&x, &y, 0.0, 2.0, 1);
        let (oracle, w) = oracle_ll(&x, &y, 0.0, 2.0);
        assert!((f.beta[0] - oracle).abs() < 1e-14);
        assert!((f.beta[0] - 11.0 / 28.0).abs() < 1e-14);
        for (a, b) in f.weights.iter().zip(&w) {
            assert!((a - b).abs() < 1e-14);
        }
        // worst-case bias with M = 2 is Σ|w|x², here equal to the intercept
        assert!((f.worstcase_bias(2.0) - 11.0 / 28.0).abs() < 1e-14);
    }

    #[test]
    fn ehw_of_synthetic_residuals() {
        let x = five();
        let mut f = fit(&x, &[0.0; 5], 0.0, 2.0, 1);
        assert_eq!(f.ehw_variance(), 0.0);
        f.residuals = vec![1.0, -1.0, 2.0, -2.0, 0.0];
        let (_, w) = oracle_ll(&x, &[0.0; 5], 0.0, 2.0);
        let direct: f64 = w.iter().zip(&f.residuals).map(|(w, u)| w * w * u * u).sum();
        assert!((f.ehw_variance() - direct).abs() < 1e-15);
        assert!((direct - 7.0625 / 12.25).abs() < 1e-14);
    }

    #[test]
    fn single_point_local_constant() {
        let f = fit(&[0.3], &[2.0], 0.3, 1.0, 0);
        assert_eq!(f.weights[0], 1.0);
        assert_eq!(f.ehw_variance(), 0.0);
    }

    #[test]
    fn two_point_uniform_bias() {
        let h = 0.7;
        let s = Sample::new(vec![-h, h], vec![0.0, 0.0]).unwrap();
        let k = KernelSpec::new(KernelKind::Uniform);
        let f = local_poly_fit(&s, s.y(), 0.0, h, 1, &k, EvalSide::TwoSided).unwrap();
        assert!((f.weights[0] - 0.5).abs() < 1e-15);
        assert_eq!(f.worstcase_bias(0.0), 0.0);
        assert!((f.worstcase_bias(3.0) - 3.0 * h * h / 2.0).abs() < 1e-14);
    }

    #[test]
    fn degenerate_windows() {
        let s = Sample::new(vec![0.0, 0.0, 5.0], vec![1.0, 2.0, 3.0]).unwrap();
        let k = KernelSpec::triangular();
        assert_eq!(
            local_poly_fit(&s, s.y(), 0.0, 1.0, 1, &k, EvalSide::TwoSided),
            Err(Error::RankDeficient { needed: 2 })
        );
        assert_eq!(
            local_poly_fit(&s, s.y(), 10.0, 1.0, 1, &k, EvalSide::TwoSided),
            Err(Error::EmptyWindow)
        );
        assert!(local_poly_fit(&s, s.y(), 0.0, -1.0, 1, &k, EvalSide::TwoSided).is_err());
    }

    #[test]
    fn one_sided_uses_only_its_side() {
        let x = vec![-0.4, -0.2, 0.0, 0.2, 0.4];
        let y = vec![100.0, 100.0, 1.0, 2.0, 3.0];
        let s = Sample::new(x, y.clone()).unwrap();
        let f = local_poly_fit(&s, &y, 0.0, 1.0, 1, &KernelSpec::triangular(), EvalSide::RightOfCutoff).unwrap();
        assert!((f.intercept() - 1.0).abs() < 1e-13);
        assert_eq!(f.weights[0], 0.0);
        assert_eq!(f.weights[1], 0.0);
    }

    #[test]
    fn fast_path_agrees_with_general_fit() {
        let x: Vec<f64> = (0..40).map(|i| ((i * 37) % 41) as f64 / 20.0 - 1.0).collect();
        let y: Vec<f64> = x.iter().map(|v| (3.0 * v).sin() + v * v).collect();
        let k = KernelSpec::triangular();
        for side in [EvalSide::TwoSided, EvalSide::LeftOfCutoff, EvalSide::RightOfCutoff] {
            let full = fit_poly(&x, &y, None, 0.05, 0.6, 1, &k, side).unwrap();
            let fast = local_linear(&x, &y, None, 0.05, 0.6, &k, side).unwrap();
            assert!((full.beta[0] - fast.intercept).abs() < 1e-12);
            assert!((full.beta[1] - fast.slope).abs() < 1e-11);
            assert!((full.ehw_variance() - fast.ehw_var).abs() < 1e-13);
            assert!((full.abs_weighted_sq_dist - fast.abs_weighted_sq_dist).abs() < 1e-13);
            assert_eq!(full.n_eff, fast.n_eff);
        }
    }

    fn dense_bias(position: Position, m: usize) -> f64 {
        // y = x²/2 on a fine midpoint grid; intercept error → μ h² / 2
        let h = 0.5;
        let (lo, side) = match position {
            Position::Interior => (-h, EvalSide::TwoSided),
            Position::Boundary => (0.0, EvalSide::RightOfCutoff),
        };
        let step = (h - lo) / m as f64;
        let x: Vec<f64> = (0..m).map(|i| lo + (i as f64 + 0.5) * step).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.5 * v * v).collect();
        local_linear(&x, &y, None, 0.0, h, &KernelSpec::triangular(), side)
            .unwrap()
            .intercept
    }

    #[test]
    fn equivalent_kernel_bias_constants() {
        let k = KernelSpec::triangular();
        for pos in [Position::Interior, Position::Boundary] {
            let (mu, _) = k.equivalent_constants(pos);
            let target = mu * 0.25 / 2.0;
            let got = dense_bias(pos, 200_000);
            assert!(((got - target) / target).abs() < 1e-3, "{pos:?}: {got} vs {target}");
        }
    }

    proptest! {
        #[test]
        fn polynomial_reproduction(
            coef in prop::collection::vec(-3.0f64..3.0, 1..4),
            xs in prop::collection::vec(-1.0f64..1.0, 12..40),
            x0 in -0.3f64..0.3,
        ) {
            let p = coef.len() - 1;
            let y: Vec<f64> = xs.iter().map(|v| coef.iter().rev().fold(0.0, |acc, c| acc * v + c)).collect();
            let s = Sample::new(xs.clone(), y.clone()).unwrap();
            if let Ok(f) = local_poly_fit(&s, &y, x0, 1.5, p, &KernelSpec::triangular(), EvalSide::TwoSided) {
                let scale = 1.0 + y.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                for r in &f.residuals {
                    prop_assert!(r.abs() <= 1e-9 * scale);
                }
                let wsum: f64 = f.weights.iter().sum();
                prop_assert!((wsum - 1.0).abs() < 1e-10);
                for j in 1..=p {
                    let m: f64 = f.weights.iter().zip(&xs).map(|(w, x)| w * (x - x0).powi(j as i32)).sum();
                    prop_assert!(m.abs() < 1e-10);
                }
            }
        }

        #[test]
        fn shift_and_scale_laws(
            xs in prop::collection::vec(-1.0f64..1.0, 10..30),
            ys in prop::collection::vec(-5.0f64..5.0, 30),
            c in -50.0f64..50.0,
            m in 0.0f64..10.0,
            lambda in 0.1f64..5.0,
        ) {
            let n = xs.len();
            let y = &ys[..n];
            let k = KernelSpec::triangular();
            let base = fit_poly(&xs, y, None, 0.1, 0.8, 1, &k, EvalSide::TwoSided);
            prop_assume!(base.is_ok());
            let base = base.unwrap();
            let shifted: Vec<f64> = y.iter().map(|v| v + c).collect();
            let sh = fit_poly(&xs, &shifted, None, 0.1, 0.8, 1, &k, EvalSide::TwoSided).unwrap();
            prop_assert!((sh.beta[0] - base.beta[0] - c).abs() < 1e-9);
            prop_assert!((sh.ehw_variance() - base.ehw_variance()).abs() < 1e-9 * (1.0 + base.ehw_variance()));
            prop_assert!((base.worstcase_bias(2.0 * m) - 2.0 * base.worstcase_bias(m)).abs() < 1e-12);
            // stretch the x-axis about x0 and the bandwidth with it
            let xs2: Vec<f64> = xs.iter().map(|x| 0.1 + lambda * (x - 0.1)).collect();
            let st = fit_poly(&xs2, y, None, 0.1, 0.8 * lambda, 1, &k, EvalSide::TwoSided).unwrap();
            let want = lambda * lambda * base.worstcase_bias(m);
            prop_assert!((st.worstcase_bias(m) - want).abs() < 1e-9 * (1.0 + want));
        }
    }
}
