//! Bounds on the effect for always-selected units in a randomized
//! experiment with sample selection, conditional on a scalar covariate.
//!
//! With monotone selection, the selected treated units mix always-selected
//! units with units selected only under treatment. Their share among the
//! selected treated at `x` is `η(x) = s₀(x)/s₁(x)`, and trimming `1 − η` from
//! either tail of the treated outcomes bounds the always-selected mean.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds_rd::{assemble_bounds, BoundsEstimate, BoundsParts, EtaComponents, Treated, TrimmedPair};
use crate::error::{Error, Result};
use crate::estimator::{EstimatorKind, TruncSpec};
use crate::inference::{bandwidth_worstcase_rmse, rot_smoothness, BandwidthChoice, CiSpec};
use crate::kernels::KernelSpec;
use crate::locfit::{check_bandwidth, fit_poly, local_linear, LinearSmooth};
use crate::sample::{EvalSide, Sample};

/// Direction of the effect of treatment on selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monotonicity {
    /// Treatment can only switch selection on; the treated arm is trimmed.
    #[default]
    TreatmentEncourages,
    /// Treatment can only switch selection off; the control arm is trimmed.
    TreatmentDiscourages,
}

impl FromStr for Monotonicity {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "treatment_encourages" | "encourages" => Ok(Monotonicity::TreatmentEncourages),
            "treatment_discourages" | "discourages" => Ok(Monotonicity::TreatmentDiscourages),
            _ => Err(Error::invalid(format!("unknown monotonicity `{s}`"))),
        }
    }
}

impl fmt::Display for Monotonicity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Monotonicity::TreatmentEncourages => "treatment_encourages",
            Monotonicity::TreatmentDiscourages => "treatment_discourages",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeeSetup {
    pub x_grid: Vec<f64>,
    pub h: f64,
    /// First-stage quantile bandwidth; defaults to `h`.
    pub a: Option<f64>,
    pub kernel: KernelSpec,
    pub monotonicity: Monotonicity,
    /// Use this kept share instead of estimating it; no sampling error is
    /// attributed to it.
    pub fixed_eta: Option<f64>,
    /// Bound on `|s_d''|`. When given, bias-aware intervals also account for
    /// the smoothing bias of the selection rates.
    pub selection_smoothness: Option<f64>,
}

impl LeeSetup {
    pub fn new(x_grid: Vec<f64>, h: f64, kernel: KernelSpec) -> Result<Self> {
        check_bandwidth(h)?;
        if x_grid.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("grid points must be finite"));
        }
        Ok(LeeSetup {
            x_grid,
            h,
            a: None,
            kernel,
            monotonicity: Monotonicity::default(),
            fixed_eta: None,
            selection_smoothness: None,
        })
    }
}

fn arms(sample: &Sample) -> Result<(&[bool], &[bool])> {
    match (sample.d(), sample.s()) {
        (Some(d), Some(s)) => Ok((d, s)),
        _ => Err(Error::invalid("treatment and selection indicators are required")),
    }
}

fn selection_fit(sample: &Sample, x0: f64, h: f64, arm: bool, kernel: &KernelSpec) -> Result<LinearSmooth> {
    let (d, s) = arms(sample)?;
    let keep: Vec<bool> = d.iter().map(|&di| di == arm).collect();
    let sv: Vec<f64> = s.iter().map(|&si| if si { 1.0 } else { 0.0 }).collect();
    local_linear(sample.x(), &sv, Some(&keep), x0, h, kernel, EvalSide::TwoSided)
}

/// Local linear estimate of `P(S = 1 | D = arm, X = x0)` and its EHW variance.
pub fn selection_rate(sample: &Sample, x0: f64, h: f64, arm: bool, kernel: &KernelSpec) -> Result<(f64, f64)> {
    let f = selection_fit(sample, x0, h, arm, kernel)?;
    Ok((f.intercept, f.ehw_var))
}

/// Bounds on the effect for always-selected units at `x0`. The grid of
/// `setup` is ignored.
pub fn lee_bounds(sample: &Sample, x0: f64, setup: &LeeSetup, ci: &CiSpec) -> Result<BoundsEstimate> {
    let (d, _) = arms(sample)?;
    match setup.monotonicity {
        Monotonicity::TreatmentEncourages => lee_encouraging(sample, x0, setup, ci),
        Monotonicity::TreatmentDiscourages => {
            // trim the control arm: swap arm labels, then map the bounds on
            // E[Y₀] − E[Y₁] back to E[Y₁] − E[Y₀]
            let flipped = Sample::build(
                sample.x().to_vec(),
                sample.y().to_vec(),
                Some(d.iter().map(|v| !v).collect()),
                sample.s().map(<[bool]>::to_vec),
            )?;
            lee_encouraging(&flipped, x0, setup, ci).map(negate_bounds)
        }
    }
}

fn negate_bounds(b: BoundsEstimate) -> BoundsEstimate {
    let neg = |e: &crate::estimator::Estimate| {
        let mut out = e.clone();
        out.value = -e.value;
        out.ci_lo = -e.ci_hi;
        out.ci_hi = -e.ci_lo;
        out
    };
    let swap = |m: [[f64; 2]; 2]| [[m[1][1], m[0][1]], [m[1][0], m[0][0]]];
    let [jl, ju] = b.joint_ci;
    BoundsEstimate {
        lower: neg(&b.upper),
        upper: neg(&b.lower),
        cov: swap(b.cov),
        cov_scaled: swap(b.cov_scaled),
        d_lower: b.d_upper.map(|v| -v),
        d_upper: b.d_lower.map(|v| -v),
        joint_ci: [(-ju.1, -ju.0), (-jl.1, -jl.0)],
        ..b
    }
}

fn lee_encouraging(sample: &Sample, x0: f64, setup: &LeeSetup, ci: &CiSpec) -> Result<BoundsEstimate> {
    let (d, s) = arms(sample)?;
    let (h, kernel) = (setup.h, &setup.kernel);
    check_bandwidth(h)?;
    let f0 = selection_fit(sample, x0, h, false, kernel)?;
    let f1 = selection_fit(sample, x0, h, true, kernel)?;
    let (s0, s1) = (f0.intercept, f1.intercept);
    if !(s1 > 0.0) {
        return Err(Error::DegenerateSelection(s1));
    }
    if !(s0 > 0.0) {
        return Err(Error::DegenerateSelection(s0));
    }
    let components = EtaComponents::Selection {
        s0,
        var0: f0.ehw_var,
        s1,
        var1: f1.ehw_var,
    };
    let (eta, eta_rel_var, eta_rel_bias, components) = match setup.fixed_eta {
        Some(e) => {
            if !(e > 0.0 && e <= 1.0) {
                return Err(Error::invalid(format!("kept share must lie in (0, 1], got {e}")));
            }
            (e, 0.0, 0.0, EtaComponents::Fixed)
        }
        None => {
            let var = f0.ehw_var / (s0 * s0) + f1.ehw_var / (s1 * s1);
            let bias = setup.selection_smoothness.map_or(0.0, |m| {
                0.5 * m * (f0.abs_weighted_sq_dist / s0 + f1.abs_weighted_sq_dist / s1)
            });
            ((s0 / s1).min(1.0), var, bias, components)
        }
    };
    let treated: Vec<bool> = d.iter().zip(s).map(|(&di, &si)| di && si).collect();
    let control: Vec<bool> = d.iter().zip(s).map(|(&di, &si)| !di && si).collect();
    let (x, y) = (sample.x(), sample.y());
    let baseline = fit_poly(x, y, Some(&control), x0, h, 1, kernel, EvalSide::TwoSided)?;
    let a = setup.a.unwrap_or(h);
    let untrimmed;
    let trimmed = if eta < 1.0 {
        Treated::Trimmed(TrimmedPair::fit(
            sample,
            Some(&treated),
            x0,
            h,
            a,
            eta,
            kernel,
            EvalSide::TwoSided,
        )?)
    } else {
        untrimmed = fit_poly(x, y, Some(&treated), x0, h, 1, kernel, EvalSide::TwoSided)?;
        Treated::Untrimmed(&untrimmed)
    };
    let parts = BoundsParts {
        a: matches!(trimmed, Treated::Trimmed(_)).then_some(a),
        trimmed,
        baseline: &baseline,
        eta_hat: eta,
        eta_rel_var,
        eta_rel_bias,
        components,
        h,
        n: sample.len(),
    };
    Ok(assemble_bounds(parts, ci))
}

/// One evaluation point of a bounds curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub x0: f64,
    pub bounds: Option<BoundsEstimate>,
    pub error: Option<String>,
}

impl CurveRow {
    /// Estimated share of treated selected units that are selected only
    /// because of treatment, `1 − η̂`.
    pub fn p_hat(&self) -> Option<f64> {
        self.bounds.as_ref().map(BoundsEstimate::trimmed_share)
    }
}

/// Bounds at every grid point; failures are recorded per row.
pub fn lee_curve(sample: &Sample, setup: &LeeSetup, ci: &CiSpec) -> Vec<CurveRow> {
    setup
        .x_grid
        .par_iter()
        .map(|&x0| match lee_bounds(sample, x0, setup, ci) {
            Ok(b) => CurveRow {
                x0,
                bounds: Some(b),
                error: None,
            },
            Err(e) => CurveRow {
                x0,
                bounds: None,
                error: Some(e.to_string()),
            },
        })
        .collect()
}

/// Worst-case RMSE bandwidth for the trimmed treated mean at `x0`, with a
/// rule-of-thumb smoothness bound. The kept share is the ratio of the
/// overall selection rates, kept inside `[0.05, 0.95]`.
pub fn lee_bandwidth(
    sample: &Sample,
    x0: f64,
    kernel: &KernelSpec,
    monotonicity: Monotonicity,
) -> Result<BandwidthChoice> {
    let (d, s) = arms(sample)?;
    let trimmed_arm = monotonicity == Monotonicity::TreatmentEncourages;
    let rate = |arm: bool| {
        let (sel, tot) = d
            .iter()
            .zip(s)
            .filter(|(&di, _)| di == arm)
            .fold((0usize, 0usize), |(a, b), (_, &si)| (a + si as usize, b + 1));
        sel as f64 / tot.max(1) as f64
    };
    let (r_trim, r_other) = (rate(trimmed_arm), rate(!trimmed_arm));
    if !(r_trim > 0.0) {
        return Err(Error::DegenerateSelection(r_trim));
    }
    let eta = (r_other / r_trim).clamp(0.05, 0.95);
    let sub = sample
        .filter(|i| d[i] == trimmed_arm && s[i])
        .ok_or(Error::EmptyWindow)?;
    let sub = Sample::new(sub.x().to_vec(), sub.y().to_vec())?;
    let spec = TruncSpec::lower(eta)?;
    let m = rot_smoothness(&sub, &spec)?;
    bandwidth_worstcase_rmse(
        &sub,
        x0,
        &spec,
        m.max(1e-8),
        kernel,
        EvalSide::TwoSided,
        EstimatorKind::Orthogonal,
        None,
    )
}
