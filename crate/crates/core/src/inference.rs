//! Confidence intervals, folded-normal critical values, bandwidth selection
//! and the rule-of-thumb smoothness constant.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{estimate_infeasible, psi, wnw_estimate, Estimate, EstimatorKind, TruncSpec};
use crate::kernels::KernelSpec;
use crate::locfit::{box_smooth, local_linear_proxy, nn_variance};
use crate::normal;
use crate::quantfit::{global_poly_ls, global_poly_quantile_scaled};
use crate::sample::{EvalSide, Sample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiMethod {
    Undersmooth,
    #[default]
    BiasAware,
}

impl FromStr for CiMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "undersmooth" => Ok(CiMethod::Undersmooth),
            "bias-aware" => Ok(CiMethod::BiasAware),
            _ => Err(Error::invalid(format!("unknown CI method `{s}`"))),
        }
    }
}

impl fmt::Display for CiMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CiMethod::Undersmooth => "undersmooth",
            CiMethod::BiasAware => "bias-aware",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CiSpec {
    pub alpha: f64,
    pub method: CiMethod,
    /// Bound on the second derivative; required for bias-aware intervals.
    pub m: Option<f64>,
}

impl CiSpec {
    pub fn new(alpha: f64, method: CiMethod, m: Option<f64>) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        if let Some(m) = m {
            if !(m >= 0.0 && m.is_finite()) {
                return Err(Error::invalid(format!(
                    "smoothness bound must be finite and non-negative, got {m}"
                )));
            }
        }
        if method == CiMethod::BiasAware && m.is_none() {
            return Err(Error::invalid("bias-aware intervals need a smoothness bound"));
        }
        Ok(CiSpec { alpha, method, m })
    }

    pub fn bias_aware(alpha: f64, m: f64) -> Result<Self> {
        Self::new(alpha, CiMethod::BiasAware, Some(m))
    }

    pub fn undersmooth(alpha: f64) -> Result<Self> {
        Self::new(alpha, CiMethod::Undersmooth, None)
    }
}

/// `1 − α` quantile of `|N(t, 1)|`.
pub fn folded_normal_cv(t: f64, alpha: f64) -> f64 {
    let t = t.abs();
    let cover = |c: f64| normal::cdf(c - t) - normal::cdf(-c - t);
    let target = 1.0 - alpha;
    let mut lo = normal::quantile(1.0 - alpha);
    let mut hi = t + normal::z_two_sided(alpha) + 1.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cover(mid) >= target {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-14 * hi.max(1.0) {
            break;
        }
    }
    0.5 * (lo + hi)
}

pub fn build_ci(value: f64, se: f64, bias_bound: f64, spec: &CiSpec) -> (f64, f64) {
    let half = match spec.method {
        CiMethod::Undersmooth => normal::z_two_sided(spec.alpha) * se,
        CiMethod::BiasAware => {
            if se > 0.0 {
                folded_normal_cv(bias_bound / se, spec.alpha) * se
            } else {
                bias_bound
            }
        }
    };
    (value - half, value + half)
}

/// Sets the worst-case bias bound and the interval of `est` per `spec`.
pub fn attach_ci(est: &Estimate, spec: &CiSpec) -> Estimate {
    let mut out = est.clone();
    out.bias_bound = spec.m.map_or(0.0, |m| 0.5 * m * est.abs_weighted_sq_dist);
    let (lo, hi) = build_ci(out.value, out.se, out.bias_bound, spec);
    out.ci_lo = lo;
    out.ci_hi = hi;
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Amse,
    WorstcaseRmse,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthInputs {
    pub b: Option<f64>,
    pub m: Option<f64>,
    pub v: Option<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthChoice {
    pub h: f64,
    pub criterion: Criterion,
    pub inputs_used: BandwidthInputs,
    /// Minimized worst-case RMSE, for the worst-case selector.
    pub objective: Option<f64>,
}

impl BandwidthChoice {
    pub fn fixed(h: f64, n: usize) -> Result<Self> {
        crate::locfit::check_bandwidth(h)?;
        Ok(BandwidthChoice {
            h,
            criterion: Criterion::Fixed,
            inputs_used: BandwidthInputs {
                b: None,
                m: None,
                v: None,
                n,
            },
            objective: None,
        })
    }
}

/// `h = (V/(4B²))^{1/5} n^{−1/5}`.
pub fn bandwidth_amse(b_hat: f64, v_hat: f64, n: usize) -> Result<BandwidthChoice> {
    if b_hat == 0.0 || !b_hat.is_finite() {
        return Err(Error::DegenerateBias);
    }
    if !(v_hat > 0.0 && v_hat.is_finite()) || n == 0 {
        return Err(Error::invalid("AMSE bandwidth needs V > 0 and n ≥ 1"));
    }
    let h = (v_hat / (4.0 * b_hat * b_hat)).powf(0.2) * (n as f64).powf(-0.2);
    Ok(BandwidthChoice {
        h,
        criterion: Criterion::Amse,
        inputs_used: BandwidthInputs {
            b: Some(b_hat),
            m: None,
            v: Some(v_hat),
            n,
        },
        objective: None,
    })
}

/// Number of log-spaced candidates in the coarse bandwidth grid.
pub const GRID_POINTS: usize = 60;
/// Extra candidates between the neighbours of the best coarse point.
pub const REFINE_POINTS: usize = 20;
/// The smallest candidate covers this many admissible observations.
const MIN_WINDOW_OBS: usize = 10;

/// Candidate range `[h_lo, h_hi]`: from the distance to the tenth nearest
/// admissible observation up to the range of the covariate.
pub fn bandwidth_range(sample: &Sample, x0: f64, side: EvalSide) -> Result<(f64, f64)> {
    let x = sample.x();
    let mut dist: Vec<f64> = x
        .iter()
        .filter(|&&v| side.admits(v, x0))
        .map(|v| (v - x0).abs())
        .collect();
    if dist.len() < 2 {
        return Err(Error::EmptyWindow);
    }
    dist.sort_by(f64::total_cmp);
    let lo = dist[MIN_WINDOW_OBS.min(dist.len() - 1)];
    let (mn, mx) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let hi = (mx - mn).max(dist[dist.len() - 1]);
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::AllBandwidthsFailed);
    }
    Ok((lo, hi))
}

fn log_grid(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    let (l, u) = (lo.ln(), hi.ln());
    (0..k)
        .map(|i| (l + (u - l) * i as f64 / (k - 1) as f64).exp())
        .collect()
}

/// Minimizes `eval(h)` over the coarse grid, then over a finer grid between
/// the neighbours of the coarse minimizer. `eval` returns `None` for
/// candidates where the estimator cannot be computed.
pub(crate) fn grid_minimize(lo: f64, hi: f64, mut eval: impl FnMut(f64) -> Option<f64>) -> Result<(f64, f64)> {
    let coarse = log_grid(lo, hi, GRID_POINTS);
    let vals: Vec<Option<f64>> = coarse.iter().map(|&h| eval(h)).collect();
    let best = vals
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|v| (i, v)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or(Error::AllBandwidthsFailed)?;
    let (mut bh, mut bv) = (coarse[best.0], best.1);
    let l = coarse[best.0.saturating_sub(1)];
    let u = coarse[(best.0 + 1).min(GRID_POINTS - 1)];
    if u > l {
        for h in log_grid(l, u, REFINE_POINTS + 2) {
            if let Some(v) = eval(h) {
                if v < bv {
                    bh = h;
                    bv = v;
                }
            }
        }
    }
    Ok((bh, bv))
}

/// Bandwidth minimizing the worst-case root mean squared error
/// `sqrt(bias(h)² + sd(h)²)` of the estimator of the requested kind with
/// `a = h`, where `bias(h)` is the worst-case bias of the second-stage smoother
/// under `|m''| ≤ M`; see [`worstcase_objective`] for the variance term.
#[allow(clippy::too_many_arguments)]
pub fn bandwidth_worstcase_rmse(
    sample: &Sample,
    x0: f64,
    spec: &TruncSpec,
    m: f64,
    kernel: &KernelSpec,
    side: EvalSide,
    kind: EstimatorKind,
    q_true: Option<&dyn Fn(f64) -> f64>,
) -> Result<BandwidthChoice> {
    if !(m > 0.0 && m.is_finite()) {
        return Err(Error::invalid(format!("smoothness bound must be positive, got {m}")));
    }
    let (lo, hi) = bandwidth_range(sample, x0, side)?;
    let mut eval = worstcase_objective(sample, x0, spec, m, kernel, side, kind, q_true)?;
    let (h, obj) = grid_minimize(lo, hi, |h| eval(h).ok())?;
    Ok(BandwidthChoice {
        h,
        criterion: Criterion::WorstcaseRmse,
        inputs_used: BandwidthInputs {
            b: None,
            m: Some(m),
            v: None,
            n: sample.len(),
        },
        objective: Some(obj),
    })
}

type Objective<'a> = Box<dyn FnMut(f64) -> Result<f64> + 'a>;

/// Neighbours used by the variance proxy of the bandwidth selector.
pub const NN_NEIGHBOURS: usize = 3;
/// Degree of the global pilot quantile regression.
const PILOT_DEGREE: usize = 4;

/// Returns a closure computing the worst-case RMSE at `h`:
/// `sqrt((M/2 Σ|w_i|(x_i − x0)²)² + Σ w_i² σ̂_i²)` with `w` the second-stage weights.
///
/// `σ̂_i²` are nearest-neighbour variance estimates of the second-stage
/// outcome, averaged over a fixed pilot window. For the infeasible estimator
/// the outcome uses the true quantile; for the feasible ones it uses a
/// global quartic quantile regression, since the feasible and infeasible
/// estimators share their first-order variance. Residuals of the fit at `h`
/// itself are not used: they vanish as the window shrinks, and so does the
/// local spread of the generated outcome, which is a smooth function of `x`
/// on the untruncated part of the sample.
#[allow(clippy::too_many_arguments)]
pub(crate) fn worstcase_objective<'a>(
    sample: &'a Sample,
    x0: f64,
    spec: &'a TruncSpec,
    m: f64,
    kernel: &'a KernelSpec,
    side: EvalSide,
    kind: EstimatorKind,
    q_true: Option<&'a dyn Fn(f64) -> f64>,
) -> Result<Objective<'a>> {
    let (x, y) = (sample.x(), sample.y());
    let score = move |var: f64, abs_sq: f64| {
        let b = 0.5 * m * abs_sq;
        (b * b + var).sqrt()
    };
    if kind == EstimatorKind::Wnw {
        return Ok(Box::new(move |h| {
            let e = wnw_estimate(sample, x0, h, spec, kernel)?;
            Ok(score(e.se * e.se, e.abs_weighted_sq_dist))
        }));
    }
    let q: Box<dyn Fn(f64) -> f64 + 'a> = match kind {
        EstimatorKind::Infeasible => {
            let q = q_true.ok_or_else(|| Error::invalid("infeasible selector needs the true quantile function"))?;
            Box::new(q)
        }
        _ => {
            let pilot = global_poly_quantile_scaled(x, y, spec.quantile_level(), PILOT_DEGREE)?;
            Box::new(move |v| pilot.eval(v))
        }
    };
    let (outcome, keep): (Vec<f64>, Option<Vec<bool>>) = match kind {
        EstimatorKind::Infeasible | EstimatorKind::Orthogonal => {
            (x.iter().zip(y).map(|(&xi, &yi)| psi(spec, q(xi), yi)).collect(), None)
        }
        EstimatorKind::NonOrthogonal => (
            x.iter()
                .zip(y)
                .map(|(&xi, &yi)| if spec.keeps(yi, q(xi)) { yi / spec.eta } else { 0.0 })
                .collect(),
            None,
        ),
        EstimatorKind::TruncatedSample => (
            y.to_vec(),
            Some(x.iter().zip(y).map(|(&xi, &yi)| spec.keeps(yi, q(xi))).collect()),
        ),
        EstimatorKind::Wnw => unreachable!("handled above"),
    };
    let mut order: Vec<usize> = (0..x.len())
        .filter(|&i| side.admits(x[i], x0) && keep.as_ref().is_none_or(|k| k[i]))
        .collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let sigma2 = box_smooth(
        x,
        &nn_variance(x, &outcome, &order, NN_NEIGHBOURS),
        &order,
        pilot_width(x, &order),
    );
    Ok(Box::new(move |h| {
        let (var, abs_sq) = local_linear_proxy(x, keep.as_deref(), x0, h, kernel, side, &sigma2)?;
        Ok(score(var, abs_sq))
    }))
}

/// Silverman-type width `1.06 sd(x) m^{−1/5}` over the `m` admissible rows.
fn pilot_width(x: &[f64], order: &[usize]) -> f64 {
    let m = order.len().max(2) as f64;
    let mean = order.iter().map(|&i| x[i]).sum::<f64>() / m;
    let sd = (order.iter().map(|&i| (x[i] - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt();
    1.06 * sd * m.powf(-0.2)
}

/// Estimate at a worst-case-RMSE bandwidth with a bias-aware interval.
#[allow(clippy::too_many_arguments)]
pub fn estimate_auto(
    sample: &Sample,
    x0: f64,
    spec: &TruncSpec,
    m: f64,
    alpha: f64,
    kernel: &KernelSpec,
    side: EvalSide,
    kind: EstimatorKind,
    q_true: Option<&dyn Fn(f64) -> f64>,
) -> Result<(Estimate, BandwidthChoice)> {
    let choice = bandwidth_worstcase_rmse(sample, x0, spec, m, kernel, side, kind, q_true)?;
    let est = match kind {
        EstimatorKind::Infeasible => {
            estimate_infeasible(sample, x0, choice.h, spec, q_true.expect("checked"), kernel, side)?
        }
        _ => crate::estimator::estimate(sample, x0, choice.h, choice.h, spec, kind, kernel, side)?,
    };
    Ok((attach_ci(&est, &CiSpec::bias_aware(alpha, m)?), choice))
}

/// Rule-of-thumb bound on the second derivative of the truncated mean:
/// global quartic quantile regression, generated outcomes from it, global
/// quartic least squares on those, and the largest absolute second
/// derivative of the latter over the observed covariates.
pub fn rot_smoothness(sample: &Sample, spec: &TruncSpec) -> Result<f64> {
    if sample.len() < 5 {
        return Err(Error::RankDeficient { needed: 5 });
    }
    let (x, y) = (sample.x(), sample.y());
    let qpoly = global_poly_quantile_scaled(x, y, spec.quantile_level(), 4)?;
    let v: Vec<f64> = x
        .iter()
        .zip(y)
        .map(|(&xi, &yi)| psi(spec, qpoly.eval(xi), yi))
        .collect();
    let mpoly = global_poly_ls(x, &v, 4)?;
    Ok(x.iter()
        .map(|&xi| mpoly.second_derivative(xi).abs())
        .fold(0.0, f64::max))
}
