//! Bounds on the effect for non-manipulating units in a sharp regression
//! discontinuity design whose running variable is manipulated by a share
//! of units just above the cutoff.
//!
//! The share is identified by the jump of the running-variable density at
//! the cutoff. Trimming that share from the bottom or the top of the outcome
//! distribution just right of the cutoff gives the two extreme scenarios.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{orthogonal_detailed, Estimate, EstimatorKind, TruncSpec};
use crate::inference::{attach_ci, build_ci, CiMethod, CiSpec};
use crate::kernels::KernelSpec;
use crate::locfit::{check_bandwidth, fit_poly, LocalFit};
use crate::normal;
use crate::sample::{EvalSide, Sample};

/// Which side of the cutoff a one-sided quantity refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutoffSide {
    /// `x < cutoff`
    Minus,
    /// `x ≥ cutoff`
    Plus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "tau")]
pub enum TauMode {
    Estimated,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RdSetup {
    pub cutoff: f64,
    /// Bandwidth of the density estimates and of the second-stage fits.
    pub h: f64,
    /// First-stage quantile bandwidth; defaults to `h`.
    pub a: Option<f64>,
    pub tau_mode: TauMode,
    pub kernel: KernelSpec,
}

impl RdSetup {
    pub fn new(cutoff: f64, h: f64, tau_mode: TauMode, kernel: KernelSpec) -> Result<Self> {
        check_bandwidth(h)?;
        if let TauMode::Fixed(t) = tau_mode {
            check_tau(t)?;
        }
        if !cutoff.is_finite() {
            return Err(Error::invalid("cutoff must be finite"));
        }
        Ok(RdSetup {
            cutoff,
            h,
            a: None,
            tau_mode,
            kernel,
        })
    }

    pub fn with_first_stage(mut self, a: f64) -> Result<Self> {
        check_bandwidth(a)?;
        self.a = Some(a);
        Ok(self)
    }

    fn first_stage(&self) -> f64 {
        self.a.unwrap_or(self.h)
    }
}

fn check_tau(t: f64) -> Result<()> {
    if (0.0..1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "manipulation share must lie in [0, 1), got {t}"
        )))
    }
}

/// Ingredients of the estimated kept-mass level `η̂`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum EtaComponents {
    /// Set by the caller; no sampling error.
    Fixed,
    /// One-sided densities of the running variable at the cutoff.
    Density {
        f_minus: f64,
        var_minus: f64,
        f_plus: f64,
        var_plus: f64,
    },
    /// Selection rates in the control (`s0`) and treated (`s1`) arms.
    Selection { s0: f64, var0: f64, s1: f64, var1: f64 },
}

/// Estimated lower and upper bounds with their joint sampling covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsEstimate {
    pub lower: Estimate,
    pub upper: Estimate,
    /// Covariance of `(lower, upper)`; the standard errors of the two
    /// estimates are the square roots of its diagonal.
    pub cov: [[f64; 2]; 2],
    /// `n h` times `cov`, the asymptotic covariance of the `√(nh)`-scaled
    /// estimators.
    pub cov_scaled: [[f64; 2]; 2],
    pub eta_hat: f64,
    pub eta_components: EtaComponents,
    /// Variance of `(η̂ − η)/η`; zero when `η` is fixed.
    pub eta_rel_var: f64,
    /// Quantile minus trimmed mean at the evaluation point, lower tail
    /// (`None` without trimming).
    pub d_lower: Option<f64>,
    pub d_upper: Option<f64>,
    /// Critical value for simultaneous coverage of both bounds.
    pub joint_cv: f64,
    /// Simultaneous intervals for the lower and the upper bound.
    pub joint_ci: [(f64, f64); 2],
}

impl BoundsEstimate {
    /// `1 − η̂`, the estimated share of trimmed units.
    pub fn trimmed_share(&self) -> f64 {
        1.0 - self.eta_hat
    }

    /// Part of the covariance of the bounds that comes from estimating `η`.
    pub fn eta_cov_component(&self) -> f64 {
        match (self.d_lower, self.d_upper) {
            (Some(l), Some(u)) => l * u * self.eta_rel_var,
            _ => 0.0,
        }
    }

    /// Interval containing the identified set with probability at least
    /// `1 − α` (built from the simultaneous intervals).
    pub fn set_ci(&self) -> (f64, f64) {
        (self.joint_ci[0].0, self.joint_ci[1].1)
    }
}

/// Linear boundary kernel density estimate of the running variable at the
/// cutoff from one side, with the variance of the estimate.
pub fn boundary_density(x: &[f64], cutoff: f64, h: f64, side: CutoffSide, kernel: &KernelSpec) -> Result<(f64, f64)> {
    check_bandwidth(h)?;
    if x.is_empty() {
        return Err(Error::EmptyWindow);
    }
    let c = kernel.constants();
    let mb = &c.mu_bar_j;
    let det = c.boundary_det();
    let n = x.len() as f64;
    let mut in_window = 0usize;
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for &xi in x {
        let v = xi - cutoff;
        let admitted = match side {
            CutoffSide::Minus => v < 0.0,
            CutoffSide::Plus => v >= 0.0,
        };
        if !admitted {
            continue;
        }
        let u = v / h;
        let k = kernel.eval(u);
        if k > 0.0 {
            in_window += 1;
            let z = k / h * (mb[2] - mb[1] * u.abs()) / det;
            sum += z;
            sum_sq += z * z;
        }
    }
    if in_window < 2 {
        return Err(Error::EmptyWindow);
    }
    let f = sum / n;
    // sample variance of the n summands (zeros included), over n
    let var = (sum_sq - n * f * f) / (n - 1.0) / n;
    Ok((f, var.max(0.0)))
}

/// `τ̂ = max{1 − f⁻/f⁺, 0}`.
pub fn manipulation_share(f_minus: f64, f_plus: f64) -> Result<f64> {
    if !(f_plus > 0.0) {
        return Err(Error::DegenerateDensity(f_plus));
    }
    if !(f_minus > 0.0) {
        return Err(Error::DegenerateDensity(f_minus));
    }
    Ok((1.0 - f_minus / f_plus).max(0.0))
}

/// Standard sharp-RD estimate: difference of one-sided local linear
/// intercepts at the cutoff.
pub fn rd_estimate(sample: &Sample, cutoff: f64, h: f64, kernel: &KernelSpec) -> Result<Estimate> {
    let (right, left) = rd_sides(sample, cutoff, h, kernel)?;
    Ok(difference(
        &right,
        &left,
        right.ehw_variance() + left.ehw_variance(),
        h,
        None,
    ))
}

fn rd_sides(sample: &Sample, cutoff: f64, h: f64, kernel: &KernelSpec) -> Result<(LocalFit, LocalFit)> {
    let (x, y) = (sample.x(), sample.y());
    let right = fit_poly(x, y, None, cutoff, h, 1, kernel, EvalSide::RightOfCutoff)?;
    let left = fit_poly(x, y, None, cutoff, h, 1, kernel, EvalSide::LeftOfCutoff)?;
    Ok((right, left))
}

fn difference(right: &LocalFit, left: &LocalFit, var: f64, h: f64, a: Option<f64>) -> Estimate {
    Estimate::assemble(
        right.intercept() - left.intercept(),
        var,
        right.abs_weighted_sq_dist + left.abs_weighted_sq_dist,
        right.n_eff + left.n_eff,
        h,
        a,
        EstimatorKind::Orthogonal,
    )
}

/// Second-stage fits of a trimmed pair on the same observations.
pub(crate) struct TrimmedPair {
    pub lower: LocalFit,
    pub upper: LocalFit,
    pub q_lower: f64,
    pub q_upper: f64,
}

impl TrimmedPair {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn fit(
        sample: &Sample,
        keep: Option<&[bool]>,
        x0: f64,
        h: f64,
        a: f64,
        eta: f64,
        kernel: &KernelSpec,
        side: EvalSide,
    ) -> Result<Self> {
        let (_, ql, lower) = orthogonal_detailed(sample, keep, x0, h, a, &TruncSpec::lower(eta)?, kernel, side)?;
        let (_, qu, upper) = orthogonal_detailed(sample, keep, x0, h, a, &TruncSpec::upper(eta)?, kernel, side)?;
        Ok(TrimmedPair {
            lower,
            upper,
            q_lower: ql.q0_hat,
            q_upper: qu.q0_hat,
        })
    }

    /// `Σ w_i² û_i^L û_i^U`; both fits share the smoother weights.
    fn cross_ehw(&self) -> f64 {
        self.lower
            .weights
            .iter()
            .zip(&self.lower.residuals)
            .zip(&self.upper.residuals)
            .map(|((w, a), b)| w * w * a * b)
            .sum()
    }
}

/// Outcome fits on the trimmed side.
pub(crate) enum Treated<'a> {
    Trimmed(TrimmedPair),
    /// `η̂ = 1`: nothing is trimmed.
    Untrimmed(&'a LocalFit),
}

/// Inputs shared by the RD and the selection bounds.
pub(crate) struct BoundsParts<'a> {
    /// Trimmed fits, or the untrimmed fit when `η̂ = 1`.
    pub trimmed: Treated<'a>,
    pub baseline: &'a LocalFit,
    pub eta_hat: f64,
    pub eta_rel_var: f64,
    /// Bound on the bias of `(η̂ − η)/η`, counted only by bias-aware intervals.
    pub eta_rel_bias: f64,
    pub components: EtaComponents,
    pub h: f64,
    pub a: Option<f64>,
    pub n: usize,
}

pub(crate) fn assemble_bounds(parts: BoundsParts<'_>, ci: &CiSpec) -> BoundsEstimate {
    let base = parts.baseline;
    let v0 = base.ehw_variance();
    let (lower, upper, cov, d_lower, d_upper) = match &parts.trimmed {
        Treated::Trimmed(pair) => {
            let dl = pair.q_lower - pair.lower.intercept();
            let du = pair.q_upper - pair.upper.intercept();
            let w = parts.eta_rel_var;
            let vl = pair.lower.ehw_variance() + dl * dl * w + v0;
            let vu = pair.upper.ehw_variance() + du * du * w + v0;
            let c = pair.cross_ehw() + dl * du * w + v0;
            let lo = difference(&pair.lower, base, vl, parts.h, parts.a);
            let hi = difference(&pair.upper, base, vu, parts.h, parts.a);
            (lo, hi, [[vl, c], [c, vu]], Some(dl), Some(du))
        }
        Treated::Untrimmed(fit) => {
            let v = fit.ehw_variance() + v0;
            let est = difference(fit, base, v, parts.h, None);
            (est.clone(), est, [[v, v], [v, v]], None, None)
        }
    };
    let with_eta_bias = |e: &Estimate, d: Option<f64>| {
        let mut out = attach_ci(e, ci);
        if let Some(d) = d {
            if parts.eta_rel_bias > 0.0 {
                out.bias_bound += d.abs() * parts.eta_rel_bias;
                (out.ci_lo, out.ci_hi) = build_ci(out.value, out.se, out.bias_bound, ci);
            }
        }
        out
    };
    let lower = with_eta_bias(&lower, d_lower);
    let upper = with_eta_bias(&upper, d_upper);
    let rho = if cov[0][0] > 0.0 && cov[1][1] > 0.0 {
        (cov[0][1] / (cov[0][0] * cov[1][1]).sqrt()).clamp(-1.0, 1.0)
    } else {
        1.0
    };
    let joint_cv = normal::joint_critical_value(rho, ci.alpha);
    let band = |e: &Estimate| {
        let bias = if ci.method == CiMethod::BiasAware {
            e.bias_bound
        } else {
            0.0
        };
        let half = joint_cv * e.se + bias;
        (e.value - half, e.value + half)
    };
    let scale = parts.n as f64 * parts.h;
    let cov_scaled = cov.map(|row| row.map(|v| v * scale));
    BoundsEstimate {
        joint_ci: [band(&lower), band(&upper)],
        lower,
        upper,
        cov,
        cov_scaled,
        eta_hat: parts.eta_hat,
        eta_components: parts.components,
        eta_rel_var: parts.eta_rel_var,
        d_lower,
        d_upper,
        joint_cv,
    }
}

/// Bounds on the effect for non-manipulating units at the cutoff.
///
/// The trimmed means use observations at or above the cutoff; the untrimmed
/// mean below the cutoff is a local linear intercept. With an estimated
/// share, the covariance adds the contribution of `η̂`, which depends on the
/// running variable only and is asymptotically uncorrelated with the
/// outcome-side terms.
pub fn rd_bounds(sample: &Sample, setup: &RdSetup, ci: &CiSpec) -> Result<BoundsEstimate> {
    if let Some(i) = sample.y().iter().position(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("y[{i}] is not finite")));
    }
    let (c, h, kernel) = (setup.cutoff, setup.h, &setup.kernel);
    let (eta, eta_rel_var, components) = match setup.tau_mode {
        TauMode::Fixed(t) => {
            check_tau(t)?;
            (1.0 - t, 0.0, EtaComponents::Fixed)
        }
        TauMode::Estimated => {
            let (fm, vm) = boundary_density(sample.x(), c, h, CutoffSide::Minus, kernel)?;
            let (fp, vp) = boundary_density(sample.x(), c, h, CutoffSide::Plus, kernel)?;
            let tau = manipulation_share(fm, fp)?;
            let comps = EtaComponents::Density {
                f_minus: fm,
                var_minus: vm,
                f_plus: fp,
                var_plus: vp,
            };
            (1.0 - tau, vm / (fm * fm) + vp / (fp * fp), comps)
        }
    };
    let (right, left) = rd_sides(sample, c, h, kernel)?;
    let a = setup.first_stage();
    let trimmed = if eta < 1.0 {
        Treated::Trimmed(TrimmedPair::fit(
            sample,
            None,
            c,
            h,
            a,
            eta,
            kernel,
            EvalSide::RightOfCutoff,
        )?)
    } else {
        Treated::Untrimmed(&right)
    };
    let parts = BoundsParts {
        a: matches!(trimmed, Treated::Trimmed(_)).then_some(a),
        trimmed,
        baseline: &left,
        eta_hat: eta,
        eta_rel_var,
        eta_rel_bias: 0.0,
        components,
        h,
        n: sample.len(),
    };
    Ok(assemble_bounds(parts, ci))
}

/// Bounds at each fixed manipulation share in `tau_grid`.
pub fn rd_sensitivity(sample: &Sample, setup: &RdSetup, tau_grid: &[f64], ci: &CiSpec) -> Result<Vec<BoundsEstimate>> {
    for &t in tau_grid {
        check_tau(t)?;
    }
    tau_grid
        .par_iter()
        .map(|&t| {
            let s = RdSetup {
                tau_mode: TauMode::Fixed(t),
                ..*setup
            };
            rd_bounds(sample, &s, ci)
        })
        .collect()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    /// Non-manipulators: X ~ U[−1, 1], Y = X + N(0, 0.5²) with no effect.
    /// A share `pi` of the population manipulates: X ~ U[0, 1], Y shifted by 3.
    pub(crate) fn manipulated(n: usize, pi: f64, seed: u64) -> Sample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let (mut x, mut y) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for _ in 0..n {
            let always = rng.random::<f64>() < pi;
            let xi = if always {
                rng.random::<f64>()
            } else {
                rng.random_range(-1.0..1.0)
            };
            let shift = if always { 3.0 } else { 0.0 };
            x.push(xi);
            y.push(xi + shift + noise.sample(&mut rng));
        }
        Sample::new(x, y).unwrap()
    }

    fn ci() -> CiSpec {
        CiSpec::undersmooth(0.05).unwrap()
    }

    #[test]
    fn density_uniform_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..50_000).map(|_| rng.random::<f64>()).collect();
        let (f, v) = boundary_density(&x, 0.0, 0.2, CutoffSide::Plus, &KernelSpec::triangular()).unwrap();
        assert!((f - 1.0).abs() < 3.0 * v.sqrt(), "{f} {}", v.sqrt());
    }

    #[test]
    fn density_linear_is_unbiased() {
        // density 2x on [0, 1]: X = sqrt(U)
        let kernel = KernelSpec::triangular();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let reps = 200;
        let (mut mean, mut var_sum) = (0.0, 0.0);
        for _ in 0..reps {
            let x: Vec<f64> = (0..5000).map(|_| rng.random::<f64>().sqrt()).collect();
            let (f, v) = boundary_density(&x, 0.5, 0.3, CutoffSide::Minus, &kernel).unwrap();
            mean += f / reps as f64;
            var_sum += v;
        }
        let mc_se = (var_sum / reps as f64).sqrt() / (reps as f64).sqrt();
        assert!((mean - 1.0).abs() < 3.0 * mc_se, "{mean} {mc_se}");
    }

    #[test]
    fn density_needs_points() {
        let k = KernelSpec::triangular();
        let x = [0.1, 0.2, 0.3];
        assert_eq!(
            boundary_density(&x, 0.0, 0.5, CutoffSide::Minus, &k),
            Err(Error::EmptyWindow)
        );
        assert_eq!(
            boundary_density(&x, 0.15, 0.5, CutoffSide::Minus, &k),
            Err(Error::EmptyWindow)
        );
        assert!(boundary_density(&x, 0.0, 0.5, CutoffSide::Plus, &k).is_ok());
    }

    #[test]
    fn share_examples() {
        assert_eq!(manipulation_share(1.0, 1.0).unwrap(), 0.0);
        assert!((manipulation_share(0.9, 1.0).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(manipulation_share(1.2, 1.0).unwrap(), 0.0);
        assert_eq!(manipulation_share(1.0, 0.0), Err(Error::DegenerateDensity(0.0)));
    }

    #[test]
    fn zero_share_is_the_rd_estimate() {
        let s = manipulated(4000, 0.0, 3);
        let k = KernelSpec::triangular();
        let setup = RdSetup::new(0.0, 0.4, TauMode::Fixed(0.0), k).unwrap();
        let b = rd_bounds(&s, &setup, &ci()).unwrap();
        let rd = rd_estimate(&s, 0.0, 0.4, &k).unwrap();
        assert_eq!(b.lower.value.to_bits(), rd.value.to_bits());
        assert_eq!(b.upper.value.to_bits(), rd.value.to_bits());
        assert_eq!(b.lower.se, rd.se);
        assert_eq!(b.eta_cov_component(), 0.0);
        let sens = rd_sensitivity(&s, &setup, &[0.0], &ci()).unwrap();
        assert_eq!(sens.len(), 1);
        assert_eq!(sens[0], b);
        assert!(rd_sensitivity(&s, &setup, &[], &ci()).unwrap().is_empty());
        assert!(rd_sensitivity(&s, &setup, &[1.0], &ci()).is_err());
    }

    #[test]
    fn estimated_share_and_covariance_structure() {
        let s = manipulated(40_000, 0.033058, 4);
        let setup = RdSetup::new(0.0, 0.5, TauMode::Estimated, KernelSpec::triangular()).unwrap();
        let b = rd_bounds(&s, &setup, &ci()).unwrap();
        assert!(b.eta_hat < 1.0);
        assert!(b.lower.value < b.upper.value);
        let (dl, du) = (b.d_lower.unwrap(), b.d_upper.unwrap());
        assert!(dl > 0.0 && du < 0.0);
        assert!(b.eta_cov_component() < 0.0);
        assert_eq!(b.cov[0][1], b.cov[1][0]);
        assert!(b.cov[0][0] >= 0.0 && b.cov[1][1] >= 0.0);
        assert!((b.lower.se.powi(2) - b.cov[0][0]).abs() < 1e-15);
        let scale = s.len() as f64 * 0.5;
        assert!((b.cov_scaled[0][1] - b.cov[0][1] * scale).abs() < 1e-12);
        // a simultaneous interval is wider than a pointwise one
        assert!(b.joint_cv >= normal::z_two_sided(0.05));
        assert!(b.joint_ci[0].0 <= b.lower.ci_lo);
        // fixed share: no contribution from η
        let f = rd_bounds(
            &s,
            &RdSetup {
                tau_mode: TauMode::Fixed(b.trimmed_share()),
                ..setup
            },
            &ci(),
        )
        .unwrap();
        assert_eq!(f.lower.value, b.lower.value);
        assert!(f.cov[0][0] < b.cov[0][0]);
    }

    #[test]
    fn width_grows_with_share() {
        let s = manipulated(40_000, 0.0, 5);
        let setup = RdSetup::new(0.0, 0.5, TauMode::Estimated, KernelSpec::triangular()).unwrap();
        let grid: Vec<f64> = (0..7).map(|i| 0.05 * i as f64).collect();
        let rows = rd_sensitivity(&s, &setup, &grid, &ci()).unwrap();
        let widths: Vec<f64> = rows.iter().map(|b| b.upper.value - b.lower.value).collect();
        assert_eq!(widths[0], 0.0);
        for w in widths.windows(2) {
            assert!(w[1] >= w[0], "{widths:?}");
        }
    }

    #[test]
    fn rejects_bad_setup() {
        let k = KernelSpec::triangular();
        assert!(RdSetup::new(0.0, 0.0, TauMode::Estimated, k).is_err());
        assert!(RdSetup::new(0.0, 1.0, TauMode::Fixed(1.0), k).is_err());
        assert!(RdSetup::new(0.0, 1.0, TauMode::Fixed(-0.1), k).is_err());
        let s = Sample::new(vec![0.1, 0.2, 0.3], vec![1.0, 2.0, 3.0]).unwrap();
        let setup = RdSetup::new(0.0, 1.0, TauMode::Fixed(0.0), k).unwrap();
        assert_eq!(rd_bounds(&s, &setup, &ci()), Err(Error::EmptyWindow));
    }
}
