//! Truncated conditional mean estimators.
//!
//! The main estimator fits a local linear quantile regression at bandwidth
//! `a`, extrapolates the fitted line over the second-stage window, and runs a
//! local linear regression of the generated outcome `ψ` at bandwidth `h`.
//! Alternatives with non-orthogonal moments are provided for comparison.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::locfit::{check_bandwidth, fit_poly, local_linear, LinearSmooth, LocalFit};
use crate::normal;
use crate::quantfit::{local_quantile_fit_masked, QuantileFit};
use crate::sample::{EvalSide, Sample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tail {
    /// Keep `Y ≤ Q(η, x)`.
    #[default]
    Lower,
    /// Keep `Y ≥ Q(1 − η, x)`.
    Upper,
}

impl FromStr for Tail {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lower" => Ok(Tail::Lower),
            "upper" => Ok(Tail::Upper),
            _ => Err(Error::invalid(format!("unknown tail `{s}` (expected lower or upper)"))),
        }
    }
}

impl fmt::Display for Tail {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tail::Lower => "lower",
            Tail::Upper => "upper",
        })
    }
}

/// Kept mass `eta` and the tail that is kept.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncSpec {
    pub eta: f64,
    pub tail: Tail,
}

impl TruncSpec {
    pub fn new(eta: f64, tail: Tail) -> Result<Self> {
        if eta > 0.0 && eta < 1.0 {
            Ok(TruncSpec { eta, tail })
        } else {
            Err(Error::invalid(format!(
                "truncation level must lie in (0, 1), got {eta}"
            )))
        }
    }

    pub fn lower(eta: f64) -> Result<Self> {
        Self::new(eta, Tail::Lower)
    }

    pub fn upper(eta: f64) -> Result<Self> {
        Self::new(eta, Tail::Upper)
    }

    /// Level of the conditional quantile that delimits the kept tail.
    pub fn quantile_level(&self) -> f64 {
        match self.tail {
            Tail::Lower => self.eta,
            Tail::Upper => 1.0 - self.eta,
        }
    }

    #[inline]
    pub fn keeps(&self, y: f64, q: f64) -> bool {
        match self.tail {
            Tail::Lower => y <= q,
            Tail::Upper => y >= q,
        }
    }

    /// Like [`keeps`](Self::keeps), but counts points within rounding error
    /// of `q` as kept, so that observations interpolated by the first stage
    /// stay in the kept tail.
    #[inline]
    pub(crate) fn keeps_fuzzy(&self, y: f64, q: f64) -> bool {
        let tol = 1e-11 * (1.0 + y.abs() + q.abs());
        match self.tail {
            Tail::Lower => y <= q + tol,
            Tail::Upper => y >= q - tol,
        }
    }
}

/// Generated outcome: `(y − (1−η)q)/η` inside the kept tail, `q` outside.
#[inline]
pub fn psi(spec: &TruncSpec, q: f64, y: f64) -> f64 {
    if spec.keeps(y, q) {
        (y - (1.0 - spec.eta) * q) / spec.eta
    } else {
        q
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    #[default]
    Orthogonal,
    Infeasible,
    NonOrthogonal,
    TruncatedSample,
    Wnw,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Orthogonal => "orthogonal",
            EstimatorKind::Infeasible => "infeasible",
            EstimatorKind::NonOrthogonal => "non_orthogonal",
            EstimatorKind::TruncatedSample => "truncated_sample",
            EstimatorKind::Wnw => "wnw",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "orthogonal" => Ok(EstimatorKind::Orthogonal),
            "infeasible" => Ok(EstimatorKind::Infeasible),
            "non_orthogonal" | "nm" => Ok(EstimatorKind::NonOrthogonal),
            "truncated_sample" | "ts" => Ok(EstimatorKind::TruncatedSample),
            "wnw" => Ok(EstimatorKind::Wnw),
            _ => Err(Error::invalid(format!("unknown estimator `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
    pub bias_bound: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub h_used: f64,
    /// First-stage bandwidth; absent for the infeasible and WNW estimators.
    pub a_used: Option<f64>,
    pub method: EstimatorKind,
    pub n_eff: usize,
    /// `Σ |w_i| (x_i − x0)²` of the final linear smoother; the worst-case
    /// bias under smoothness bound `M` is `M/2` times this.
    pub abs_weighted_sq_dist: f64,
}

impl Estimate {
    fn from_smooth(s: &LinearSmooth, h: f64, a: Option<f64>, method: EstimatorKind) -> Self {
        Self::assemble(s.intercept, s.ehw_var, s.abs_weighted_sq_dist, s.n_eff, h, a, method)
    }

    pub(crate) fn assemble(
        value: f64,
        var: f64,
        abs_sq: f64,
        n_eff: usize,
        h: f64,
        a: Option<f64>,
        method: EstimatorKind,
    ) -> Self {
        let se = var.max(0.0).sqrt();
        let z = normal::z_two_sided(0.05);
        Estimate {
            value,
            se,
            bias_bound: 0.0,
            ci_lo: value - z * se,
            ci_hi: value + z * se,
            h_used: h,
            a_used: a,
            method,
            n_eff,
            abs_weighted_sq_dist: abs_sq,
        }
    }
}

/// Two-stage estimate of the truncated mean at `x0`.
///
/// `kind` selects the second-stage outcome; the infeasible estimator needs
/// the true quantile function and is available as [`estimate_infeasible`].
#[allow(clippy::too_many_arguments)]
pub fn estimate(
    sample: &Sample,
    x0: f64,
    h: f64,
    a: f64,
    spec: &TruncSpec,
    kind: EstimatorKind,
    kernel: &KernelSpec,
    side: EvalSide,
) -> Result<Estimate> {
    match kind {
        EstimatorKind::Orthogonal | EstimatorKind::NonOrthogonal | EstimatorKind::TruncatedSample => {
            feasible(sample, None, x0, h, a, spec, kind, kernel, side, None).map(|r| r.0)
        }
        EstimatorKind::Wnw => {
            if side.is_one_sided() {
                return Err(Error::BoundaryUnsupported);
            }
            wnw_estimate(sample, x0, h, spec, kernel)
        }
        EstimatorKind::Infeasible => Err(Error::invalid(
            "the infeasible estimator needs the true quantile function; use estimate_infeasible",
        )),
    }
}

/// Second stage on `ψ(η, Q(η, X_i))` with the true quantile `q_true`
/// (evaluated at the quantile level of `spec`).
pub fn estimate_infeasible(
    sample: &Sample,
    x0: f64,
    h: f64,
    spec: &TruncSpec,
    q_true: &dyn Fn(f64) -> f64,
    kernel: &KernelSpec,
    side: EvalSide,
) -> Result<Estimate> {
    let psi_vals: Vec<f64> = sample
        .x()
        .iter()
        .zip(sample.y())
        .map(|(&x, &y)| psi(spec, q_true(x), y))
        .collect();
    let s = local_linear(sample.x(), &psi_vals, None, x0, h, kernel, side)?;
    Ok(Estimate::from_smooth(&s, h, None, EstimatorKind::Infeasible))
}

/// Generated outcomes for a given first-stage line; rows outside the
/// `h`-window are left at zero.
pub(crate) fn psi_from_line(
    sample: &Sample,
    keep: Option<&[bool]>,
    x0: f64,
    h: f64,
    spec: &TruncSpec,
    coeffs: &[f64],
) -> Vec<f64> {
    let (x, y) = (sample.x(), sample.y());
    let mut out = vec![0.0; x.len()];
    for i in 0..x.len() {
        if keep.is_some_and(|k| !k[i]) || (x[i] - x0).abs() > h {
            continue;
        }
        let d = x[i] - x0;
        let q = coeffs.iter().rev().fold(0.0, |acc, c| acc * d + c);
        out[i] = psi(spec, q, y[i]);
    }
    out
}

/// Feasible two-stage estimate; also returns the first-stage fit. `warm`
/// seeds the quantile solver with unscaled coefficients.
#[allow(clippy::too_many_arguments)]
pub(crate) fn feasible(
    sample: &Sample,
    keep: Option<&[bool]>,
    x0: f64,
    h: f64,
    a: f64,
    spec: &TruncSpec,
    kind: EstimatorKind,
    kernel: &KernelSpec,
    side: EvalSide,
    warm: Option<&[f64]>,
) -> Result<(Estimate, QuantileFit)> {
    check_bandwidth(h)?;
    let q = local_quantile_fit_masked(sample, keep, x0, a, spec.quantile_level(), 1, kernel, side, warm)?;
    let coeffs = [q.q0_hat, q.q1_hat];
    let (x, y) = (sample.x(), sample.y());
    let qline = |xi: f64| coeffs[0] + coeffs[1] * (xi - x0);
    let smooth = match kind {
        EstimatorKind::Orthogonal => {
            let v = psi_from_line(sample, keep, x0, h, spec, &coeffs);
            local_linear(x, &v, keep, x0, h, kernel, side)?
        }
        EstimatorKind::NonOrthogonal => {
            let v: Vec<f64> = (0..x.len())
                .map(|i| {
                    if (x[i] - x0).abs() <= h && keep.is_none_or(|k| k[i]) && spec.keeps_fuzzy(y[i], qline(x[i])) {
                        y[i] / spec.eta
                    } else {
                        0.0
                    }
                })
                .collect();
            local_linear(x, &v, keep, x0, h, kernel, side)?
        }
        EstimatorKind::TruncatedSample => {
            let mask: Vec<bool> = (0..x.len())
                .map(|i| keep.is_none_or(|k| k[i]) && spec.keeps_fuzzy(y[i], qline(x[i])))
                .collect();
            local_linear(x, y, Some(&mask), x0, h, kernel, side)?
        }
        _ => unreachable!("dispatched by caller"),
    };
    Ok((Estimate::from_smooth(&smooth, h, Some(a), kind), q))
}

/// Feasible orthogonal estimate with the full second-stage fit, as needed
/// for covariance plug-ins.
#[allow(clippy::too_many_arguments)]
pub(crate) fn orthogonal_detailed(
    sample: &Sample,
    keep: Option<&[bool]>,
    x0: f64,
    h: f64,
    a: f64,
    spec: &TruncSpec,
    kernel: &KernelSpec,
    side: EvalSide,
) -> Result<(Estimate, QuantileFit, LocalFit)> {
    check_bandwidth(h)?;
    let q = local_quantile_fit_masked(sample, keep, x0, a, spec.quantile_level(), 1, kernel, side, None)?;
    let v = psi_from_line(sample, keep, x0, h, spec, &[q.q0_hat, q.q1_hat]);
    let fit = fit_poly(sample.x(), &v, keep, x0, h, 1, kernel, side)?;
    let est = Estimate::assemble(
        fit.intercept(),
        fit.ehw_variance(),
        fit.abs_weighted_sq_dist,
        fit.n_eff,
        h,
        Some(a),
        EstimatorKind::Orthogonal,
    );
    Ok((est, q, fit))
}

/// Empirical likelihood weights `p_i = 1/(n(1 + λ g_i))`, `g_i = (x_i − x0) k_h(x_i − x0)`,
/// with `λ` chosen so that `Σ p_i g_i = 0`.
pub fn el_weights(sample: &Sample, x0: f64, h: f64, kernel: &KernelSpec) -> Result<Vec<f64>> {
    check_bandwidth(h)?;
    let g: Vec<f64> = sample
        .x()
        .iter()
        .map(|&x| (x - x0) * kernel.eval((x - x0) / h) / h)
        .collect();
    el_weights_from(&g)
}

fn el_weights_from(g: &[f64]) -> Result<Vec<f64>> {
    let n = g.len() as f64;
    let gmax = g.iter().copied().fold(0.0f64, f64::max);
    let gmin = g.iter().copied().fold(0.0f64, f64::min);
    if g.iter().all(|&v| v == 0.0) {
        return Err(Error::EmptyWindow);
    }
    if gmax <= 0.0 || gmin >= 0.0 {
        return Err(Error::BoundaryUnsupported);
    }
    // F(λ) = Σ g/(1+λg) decreases strictly on (−1/gmax, −1/gmin)
    let f = |lam: f64| -> (f64, f64) {
        g.iter().fold((0.0, 0.0), |(s, ds), &gi| {
            let den = 1.0 + lam * gi;
            (s + gi / den, ds - gi * gi / (den * den))
        })
    };
    let scale: f64 = g.iter().map(|v| v.abs()).sum();
    let (mut lo, mut hi) = (-1.0 / gmax, -1.0 / gmin);
    let mut lam = 0.0;
    for _ in 0..500 {
        let (val, der) = f(lam);
        if val.abs() <= 1e-15 * scale {
            break;
        }
        if val > 0.0 {
            lo = lam;
        } else {
            hi = lam;
        }
        let newton = lam - val / der;
        lam = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= 1e-300_f64.max(f64::EPSILON * lam.abs()) {
            break;
        }
    }
    Ok(g.iter().map(|&gi| 1.0 / (n * (1.0 + lam * gi))).collect())
}

/// Weighted Nadaraya-Watson truncated mean: inverts the weighted conditional
/// c.d.f. at `η` and averages the outcomes at or below that quantile.
pub fn wnw_estimate(sample: &Sample, x0: f64, h: f64, spec: &TruncSpec, kernel: &KernelSpec) -> Result<Estimate> {
    if spec.tail == Tail::Upper {
        let neg = sample.with_outcome(sample.y().iter().map(|v| -v).collect())?;
        let mut e = wnw_estimate(&neg, x0, h, &TruncSpec::lower(spec.eta)?, kernel)?;
        e.value = -e.value;
        let (lo, hi) = (-e.ci_hi, -e.ci_lo);
        e.ci_lo = lo;
        e.ci_hi = hi;
        return Ok(e);
    }
    let p = el_weights(sample, x0, h, kernel)?;
    let (x, y) = (sample.x(), sample.y());
    let mut win: Vec<(f64, f64, f64)> = Vec::new(); // (y, weight, x − x0)
    for i in 0..x.len() {
        let k = kernel.eval((x[i] - x0) / h) / h;
        if k > 0.0 {
            win.push((y[i], p[i] * k, x[i] - x0));
        }
    }
    let total: f64 = win.iter().map(|w| w.1).sum();
    win.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut cum = 0.0;
    let mut q = win.last().expect("window is not empty").0;
    let mut j = 0;
    while j < win.len() {
        // accumulate ties together so F̂ is evaluated at data values
        let yj = win[j].0;
        while j < win.len() && win[j].0 == yj {
            cum += win[j].1;
            j += 1;
        }
        if cum / total >= spec.eta {
            q = yj;
            break;
        }
    }
    let kept: Vec<&(f64, f64, f64)> = win.iter().filter(|w| w.0 <= q).collect();
    let mass: f64 = kept.iter().map(|w| w.1).sum();
    let value = kept.iter().map(|w| w.1 * w.0).sum::<f64>() / mass;
    let (mut var, mut abs_sq) = (0.0, 0.0);
    for w in &kept {
        let omega = w.1 / mass;
        var += omega * omega * (w.0 - value).powi(2);
        abs_sq += omega.abs() * w.2 * w.2;
    }
    Ok(Estimate::assemble(
        value,
        var,
        abs_sq,
        kept.len(),
        h,
        None,
        EstimatorKind::Wnw,
    ))
}

/// `r`-th derivative of the truncated mean from order-`p` fits in both stages.
#[allow(clippy::too_many_arguments)]
pub fn estimate_derivative(
    sample: &Sample,
    x0: f64,
    h: f64,
    a: f64,
    spec: &TruncSpec,
    p: usize,
    r: usize,
    kernel: &KernelSpec,
    side: EvalSide,
) -> Result<f64> {
    if !(1..=3).contains(&p) || r > p {
        return Err(Error::invalid(format!(
            "need 1 ≤ p ≤ 3 and r ≤ p, got p = {p}, r = {r}"
        )));
    }
    check_bandwidth(h)?;
    let q = local_quantile_fit_masked(sample, None, x0, a, spec.quantile_level(), p, kernel, side, None)?;
    let v = psi_from_line(sample, None, x0, h, spec, &q.coeffs);
    let fit = fit_poly(sample.x(), &v, None, x0, h, p, kernel, side)?;
    let fact: f64 = (1..=r).map(|k| k as f64).product();
    Ok(fact * fit.beta[r])
}
