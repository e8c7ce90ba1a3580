//! Monte Carlo harness for the location-scale simulation designs.
//!
//! `X ~ U[−1, 1]`, `Y = m_j(X) + σ(X) ε` with `ε ~ N(0, 1)`, and the truncated
//! mean at `x0 = 0` is estimated at `η ∈ {0.2, 0.5, 0.8}`.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{estimate, estimate_infeasible, EstimatorKind, TruncSpec};
use crate::inference::{attach_ci, bandwidth_worstcase_rmse, rot_smoothness, CiSpec};
use crate::kernels::KernelSpec;
use crate::normal;
use crate::sample::{EvalSide, Sample};

pub const ETAS: [f64; 3] = [0.2, 0.5, 0.8];
pub const TRUE_M: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Noise {
    /// `σ(x) = 0.5`.
    Homoskedastic,
    /// `σ(x) = 0.5 + x`.
    Heteroskedastic,
}

impl Noise {
    pub const ALL: [Noise; 2] = [Noise::Homoskedastic, Noise::Heteroskedastic];

    pub fn sigma(self, x: f64) -> f64 {
        match self {
            Noise::Homoskedastic => 0.5,
            Noise::Heteroskedastic => 0.5 + x,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthRule {
    /// Smoothness bound `M = 2`, valid for all three designs.
    TrueM,
    /// Rule-of-thumb bound estimated from each sample.
    Rot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McDesign {
    pub design_id: u8,
    pub noise: Noise,
    pub eta: f64,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    pub rule: BandwidthRule,
    pub alpha: f64,
}

impl McDesign {
    pub fn new(
        design_id: u8,
        noise: Noise,
        eta: f64,
        n: usize,
        reps: usize,
        seed: u64,
        rule: BandwidthRule,
    ) -> Result<Self> {
        if !(1..=3).contains(&design_id) {
            return Err(Error::invalid(format!("design must be 1, 2 or 3, got {design_id}")));
        }
        if n < 2 || reps == 0 {
            return Err(Error::invalid("need n ≥ 2 and at least one replication"));
        }
        TruncSpec::lower(eta)?;
        Ok(McDesign {
            design_id,
            noise,
            eta,
            n,
            reps,
            seed,
            rule,
            alpha: 0.05,
        })
    }
}

#[inline]
fn s(x: f64) -> f64 {
    let p = x.max(0.0);
    p * p
}

/// Conditional mean functions of the three designs.
pub fn m_design(design_id: u8, x: f64) -> f64 {
    match design_id {
        1 => x * x - 2.0 * s(x.abs() - 0.25),
        2 => x * x - 2.0 * s(x.abs() - 0.2) + 2.0 * s(x.abs() - 0.5) - 2.0 * s(x.abs() - 0.65),
        3 => (x + 1.0).powi(2) - 2.0 * s(x + 0.2) + 2.0 * s(x - 0.2) - 2.0 * s(x - 0.4) + 2.0 * s(x - 0.7) - 0.92,
        _ => panic!("unknown design {design_id}"),
    }
}

/// True conditional `level`-quantile of `Y` given `X = x`.
pub fn true_quantile(design_id: u8, noise: Noise, level: f64, x: f64) -> f64 {
    // ε is symmetric, so a negative scale acts like its absolute value
    m_design(design_id, x) + noise.sigma(x).abs() * normal::quantile(level)
}

/// `m_j(x) − φ(q_η)/η · σ(x)`.
pub fn truth(design_id: u8, noise: Noise, eta: f64, x: f64) -> Result<f64> {
    let sigma = noise.sigma(x);
    if sigma <= 0.0 {
        return Err(Error::NegativeScale(x));
    }
    Ok(m_design(design_id, x) - normal::pdf(normal::quantile(eta)) / eta * sigma)
}

fn stream_key(seed: u64, design_id: u8, noise: Noise) -> u64 {
    let tag = (design_id as u64) << 1 | matches!(noise, Noise::Heteroskedastic) as u64;
    seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Draws replication `rep` of a design; identical inputs give identical samples.
pub fn gen_sample(design: &McDesign, rep: u64) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(stream_key(design.seed, design.design_id, design.noise));
    rng.set_stream(rep);
    let n = design.n;
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let xi: f64 = rng.random_range(-1.0..=1.0);
        let e: f64 = rng.sample(StandardNormal);
        x.push(xi);
        y.push(m_design(design.design_id, xi) + design.noise.sigma(xi) * e);
    }
    Sample::new(x, y).expect("generated sample is valid")
}

/// Per-replication outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepResult {
    pub m_used: f64,
    pub inf_value: f64,
    pub inf_h: f64,
    pub inf_half: f64,
    /// Feasible estimate at the infeasible estimator's bandwidth.
    pub feas_at_inf_value: f64,
    pub feas_value: f64,
    pub feas_h: f64,
    pub feas_half: f64,
}

pub fn run_rep(design: &McDesign, rep: u64) -> Result<RepResult> {
    let sample = gen_sample(design, rep);
    let spec = TruncSpec::lower(design.eta)?;
    let kernel = KernelSpec::triangular();
    let side = EvalSide::TwoSided;
    let (id, noise, eta) = (design.design_id, design.noise, design.eta);
    let q = move |x: f64| true_quantile(id, noise, eta, x);
    let m = match design.rule {
        BandwidthRule::TrueM => TRUE_M,
        BandwidthRule::Rot => rot_smoothness(&sample, &spec)?,
    };
    let ci = CiSpec::bias_aware(design.alpha, m)?;
    let h_inf = bandwidth_worstcase_rmse(
        &sample,
        0.0,
        &spec,
        m,
        &kernel,
        side,
        EstimatorKind::Infeasible,
        Some(&q),
    )?
    .h;
    let inf = attach_ci(
        &estimate_infeasible(&sample, 0.0, h_inf, &spec, &q, &kernel, side)?,
        &ci,
    );
    let feas_at_inf = estimate(
        &sample,
        0.0,
        h_inf,
        h_inf,
        &spec,
        EstimatorKind::Orthogonal,
        &kernel,
        side,
    )?;
    let h_feas = bandwidth_worstcase_rmse(&sample, 0.0, &spec, m, &kernel, side, EstimatorKind::Orthogonal, None)?.h;
    let feas = attach_ci(
        &estimate(
            &sample,
            0.0,
            h_feas,
            h_feas,
            &spec,
            EstimatorKind::Orthogonal,
            &kernel,
            side,
        )?,
        &ci,
    );
    Ok(RepResult {
        m_used: m,
        inf_value: inf.value,
        inf_h: h_inf,
        inf_half: 0.5 * (inf.ci_hi - inf.ci_lo),
        feas_at_inf_value: feas_at_inf.value,
        feas_value: feas.value,
        feas_h: h_feas,
        feas_half: 0.5 * (feas.ci_hi - feas.ci_lo),
    })
}

/// Statistic with its Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub value: f64,
    pub mc_se: f64,
}

fn mean_stat(v: impl Iterator<Item = f64> + Clone) -> Stat {
    let n = v.clone().count() as f64;
    let mean = v.clone().sum::<f64>() / n;
    let var = if n > 1.0 {
        v.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Stat {
        value: mean,
        mc_se: (var / n).sqrt(),
    }
}

fn rms_stat(errors: impl Iterator<Item = f64> + Clone) -> Stat {
    let sq = mean_stat(errors.map(|e| e * e));
    let rms = sq.value.sqrt();
    Stat {
        value: rms,
        mc_se: if rms > 0.0 { sq.mc_se / (2.0 * rms) } else { 0.0 },
    }
}

/// One estimator's summary within a cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub rmse: Stat,
    pub coverage: Stat,
    pub mean_h: Stat,
    /// Average half-length `cv · se` of the bias-aware interval.
    pub ci_half_length: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub design: McDesign,
    pub truth: f64,
    pub infeasible: EstimatorSummary,
    /// Feasible estimator at its own selected bandwidth.
    pub feasible: EstimatorSummary,
    /// Feasible RMSE at the infeasible estimator's bandwidth.
    pub feasible_at_infeasible_h_rmse: Stat,
    pub rms_distance_to_infeasible: Stat,
    pub mean_m: f64,
    pub completed: usize,
    pub failures: usize,
}

impl McReport {
    pub fn from_reps(design: &McDesign, results: &[Result<RepResult>]) -> Result<Self> {
        let truth = truth(design.design_id, design.noise, design.eta, 0.0)?;
        let ok: Vec<RepResult> = results.iter().filter_map(|r| r.as_ref().ok().copied()).collect();
        let failures = results.len() - ok.len();
        if ok.is_empty() || failures * 100 > results.len() {
            return Err(Error::invalid(format!(
                "{failures} of {} replications failed in design {} / {:?} / eta {}",
                results.len(),
                design.design_id,
                design.noise,
                design.eta
            )));
        }
        let cover = |v: f64, half: f64| if (v - truth).abs() <= half { 1.0 } else { 0.0 };
        let infeasible = EstimatorSummary {
            rmse: rms_stat(ok.iter().map(|r| r.inf_value - truth)),
            coverage: mean_stat(ok.iter().map(|r| cover(r.inf_value, r.inf_half))),
            mean_h: mean_stat(ok.iter().map(|r| r.inf_h)),
            ci_half_length: mean_stat(ok.iter().map(|r| r.inf_half)),
        };
        let feasible = EstimatorSummary {
            rmse: rms_stat(ok.iter().map(|r| r.feas_value - truth)),
            coverage: mean_stat(ok.iter().map(|r| cover(r.feas_value, r.feas_half))),
            mean_h: mean_stat(ok.iter().map(|r| r.feas_h)),
            ci_half_length: mean_stat(ok.iter().map(|r| r.feas_half)),
        };
        Ok(McReport {
            design: design.clone(),
            truth,
            infeasible,
            feasible,
            feasible_at_infeasible_h_rmse: rms_stat(ok.iter().map(|r| r.feas_at_inf_value - truth)),
            rms_distance_to_infeasible: rms_stat(ok.iter().map(|r| r.feas_at_inf_value - r.inf_value)),
            mean_m: ok.iter().map(|r| r.m_used).sum::<f64>() / ok.len() as f64,
            completed: ok.len(),
            failures,
        })
    }
}

/// Runs all replications of a cell; the result does not depend on `threads`.
pub fn run_cell(design: &McDesign, threads: usize) -> Result<McReport> {
    let reps: Vec<u64> = (0..design.reps as u64).collect();
    let results: Vec<Result<RepResult>> = if threads <= 1 {
        reps.iter().map(|&r| run_rep(design, r)).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::invalid(e.to_string()))?;
        pool.install(|| reps.par_iter().map(|&r| run_rep(design, r)).collect())
    };
    McReport::from_reps(design, &results)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TableId {
    #[serde(rename = "1")]
    T1,
    #[serde(rename = "2")]
    T2,
    #[serde(rename = "f1")]
    F1,
}

impl TableId {
    pub fn rule(self) -> BandwidthRule {
        match self {
            TableId::T1 | TableId::T2 => BandwidthRule::TrueM,
            TableId::F1 => BandwidthRule::Rot,
        }
    }
}

impl FromStr for TableId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "1" => Ok(TableId::T1),
            "2" => Ok(TableId::T2),
            "f1" | "f.1" => Ok(TableId::F1),
            _ => Err(Error::invalid(format!("unknown table `{s}` (expected 1, 2 or f1)"))),
        }
    }
}

impl fmt::Display for TableId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TableId::T1 => "1",
            TableId::T2 => "2",
            TableId::F1 => "F1",
        })
    }
}

/// Published values for a cell, in natural units (not multiplied by 100).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub inf_rmse: Option<f64>,
    pub feas_rmse: Option<f64>,
    pub distance: Option<f64>,
    pub inf_coverage: Option<f64>,
    pub feas_coverage: Option<f64>,
    pub inf_h: Option<f64>,
    pub feas_h: Option<f64>,
    pub inf_ci_length: Option<f64>,
    pub feas_ci_length: Option<f64>,
}

/// Indexed `[noise][eta][design]` with noise order homoskedastic,
/// heteroskedastic and `η` order 0.2, 0.5, 0.8.
type Grid = [[[f64; 3]; 3]; 2];

#[allow(clippy::approx_constant)]
mod published {
    use super::Grid;

    // RMSE and distance to the infeasible estimator, ×100.
    pub const T1_INF: Grid = [
        [[5.044, 5.002, 5.146], [4.094, 4.068, 4.134], [3.742, 3.721, 3.759]],
        [[5.095, 5.032, 5.177], [4.126, 4.091, 4.157], [3.766, 3.742, 3.782]],
    ];
    pub const T1_FEAS: Grid = [
        [[5.273, 5.222, 4.965], [4.202, 4.174, 4.041], [3.804, 3.782, 3.707]],
        [[5.306, 5.236, 5.006], [4.230, 4.192, 4.070], [3.825, 3.800, 3.731]],
    ];
    pub const T1_DIST: Grid = [
        [[0.563, 0.569, 0.575], [0.277, 0.280, 0.282], [0.164, 0.165, 0.166]],
        [[0.548, 0.551, 0.556], [0.271, 0.271, 0.273], [0.161, 0.160, 0.161]],
    ];

    // coverage in percent, bandwidth, interval length
    pub const T2_INF_COV: Grid = [
        [[92.1, 92.4, 96.1], [93.5, 93.7, 96.0], [94.4, 94.6, 95.7]],
        [[92.1, 92.7, 96.3], [93.4, 93.8, 96.2], [94.4, 94.6, 95.8]],
    ];
    pub const T2_FEAS_COV: Grid = [
        [[92.1, 92.3, 96.1], [93.6, 93.8, 95.9], [94.4, 94.5, 95.9]],
        [[92.5, 93.0, 96.1], [93.6, 94.0, 96.0], [94.4, 94.6, 95.8]],
    ];
    pub const T2_INF_H: Grid = [
        [[0.373, 0.372, 0.369], [0.334, 0.334, 0.333], [0.319, 0.319, 0.318]],
        [[0.382, 0.384, 0.379], [0.341, 0.344, 0.341], [0.325, 0.328, 0.326]],
    ];
    pub const T2_FEAS_H: Grid = [
        [[0.366, 0.368, 0.374], [0.331, 0.332, 0.335], [0.318, 0.318, 0.320]],
        [[0.375, 0.380, 0.385], [0.337, 0.342, 0.344], [0.323, 0.327, 0.328]],
    ];
    pub const T2_INF_LEN: Grid = [
        [[0.099, 0.099, 0.099], [0.080, 0.080, 0.080], [0.073, 0.073, 0.073]],
        [[0.100, 0.100, 0.100], [0.081, 0.081, 0.081], [0.074, 0.074, 0.074]],
    ];
    pub const T2_FEAS_LEN: Grid = [
        [[0.100, 0.100, 0.098], [0.081, 0.081, 0.080], [0.074, 0.074, 0.073]],
        [[0.101, 0.101, 0.099], [0.081, 0.081, 0.080], [0.074, 0.074, 0.074]],
    ];

    pub const F1_INF_COV: Grid = [
        [[93.6, 92.1, 95.4], [95.0, 93.1, 96.0], [95.7, 94.0, 96.2]],
        [[93.4, 92.6, 95.6], [95.0, 93.6, 96.5], [95.7, 94.3, 96.6]],
    ];
    pub const F1_FEAS_COV: Grid = [
        [[93.4, 92.2, 95.7], [94.9, 93.3, 96.1], [95.7, 94.0, 96.4]],
        [[93.5, 92.9, 95.8], [95.1, 93.7, 96.5], [95.7, 94.3, 96.7]],
    ];
    pub const F1_INF_H: Grid = [
        [[0.231, 0.310, 0.257], [0.207, 0.279, 0.231], [0.197, 0.266, 0.222]],
        [[0.239, 0.310, 0.250], [0.213, 0.277, 0.225], [0.202, 0.264, 0.215]],
    ];
    pub const F1_FEAS_H: Grid = [
        [[0.227, 0.307, 0.260], [0.204, 0.277, 0.233], [0.196, 0.265, 0.222]],
        [[0.235, 0.307, 0.254], [0.210, 0.276, 0.227], [0.201, 0.263, 0.216]],
    ];
    pub const F1_INF_LEN: Grid = [
        [[0.128, 0.113, 0.120], [0.104, 0.091, 0.098], [0.095, 0.083, 0.089]],
        [[0.129, 0.115, 0.123], [0.104, 0.093, 0.100], [0.095, 0.085, 0.091]],
    ];
    pub const F1_FEAS_LEN: Grid = [
        [[0.128, 0.113, 0.119], [0.104, 0.092, 0.098], [0.095, 0.084, 0.089]],
        [[0.129, 0.116, 0.122], [0.105, 0.094, 0.100], [0.096, 0.085, 0.092]],
    ];
}

/// Published reference values for a cell of a table.
pub fn reference(table: TableId, design_id: u8, noise: Noise, eta: f64) -> Option<Reference> {
    let ni = match noise {
        Noise::Homoskedastic => 0,
        Noise::Heteroskedastic => 1,
    };
    let ei = ETAS.iter().position(|&e| (e - eta).abs() < 1e-12)?;
    let di = (design_id as usize).checked_sub(1).filter(|&d| d < 3)?;
    let g = |grid: &Grid| Some(grid[ni][ei][di]);
    let pct = |grid: &Grid| Some(grid[ni][ei][di] / 100.0);
    use published::*;
    Some(match table {
        TableId::T1 => Reference {
            inf_rmse: pct(&T1_INF),
            feas_rmse: pct(&T1_FEAS),
            distance: pct(&T1_DIST),
            inf_coverage: None,
            feas_coverage: None,
            inf_h: None,
            feas_h: None,
            inf_ci_length: None,
            feas_ci_length: None,
        },
        TableId::T2 => Reference {
            inf_rmse: None,
            feas_rmse: None,
            distance: None,
            inf_coverage: pct(&T2_INF_COV),
            feas_coverage: pct(&T2_FEAS_COV),
            inf_h: g(&T2_INF_H),
            feas_h: g(&T2_FEAS_H),
            inf_ci_length: g(&T2_INF_LEN),
            feas_ci_length: g(&T2_FEAS_LEN),
        },
        TableId::F1 => Reference {
            inf_rmse: None,
            feas_rmse: None,
            distance: None,
            inf_coverage: pct(&F1_INF_COV),
            feas_coverage: pct(&F1_FEAS_COV),
            inf_h: g(&F1_INF_H),
            feas_h: g(&F1_FEAS_H),
            inf_ci_length: g(&F1_INF_LEN),
            feas_ci_length: g(&F1_FEAS_LEN),
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableCell {
    pub report: McReport,
    pub reference: Reference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableReport {
    pub table: TableId,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    pub cells: Vec<TableCell>,
}

/// Cell order of every table: noise, then `η`, then design.
pub fn table_designs(rule: BandwidthRule, reps: usize, n: usize, seed: u64) -> Result<Vec<McDesign>> {
    let mut out = Vec::with_capacity(18);
    for noise in Noise::ALL {
        for eta in ETAS {
            for id in 1..=3 {
                out.push(McDesign::new(id, noise, eta, n, reps, seed, rule)?);
            }
        }
    }
    Ok(out)
}

pub fn run_table(table: TableId, reps: usize, n: usize, seed: u64, threads: usize) -> Result<TableReport> {
    let designs = table_designs(table.rule(), reps, n, seed)?;
    let reports = designs
        .iter()
        .map(|d| run_cell(d, threads))
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble_table(table, reports))
}

/// Pairs cell reports with the published values of `table`.
pub fn assemble_table(table: TableId, reports: Vec<McReport>) -> TableReport {
    let first = &reports[0].design;
    let (n, reps, seed) = (first.n, first.reps, first.seed);
    let cells = reports
        .into_iter()
        .map(|r| {
            let reference = reference(table, r.design.design_id, r.design.noise, r.design.eta).expect("table cell");
            TableCell { report: r, reference }
        })
        .collect();
    TableReport {
        table,
        n,
        reps,
        seed,
        cells,
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x}"))
}

impl TableReport {
    pub const CSV_HEADER: &'static str = "table,design,noise,eta,mean_m,failures,\
inf_rmse,inf_rmse_se,inf_coverage,inf_coverage_se,inf_mean_h,inf_mean_h_se,inf_ci_half_length,inf_ci_half_length_se,\
feas_rmse,feas_rmse_se,feas_coverage,feas_coverage_se,feas_mean_h,feas_mean_h_se,feas_ci_half_length,feas_ci_half_length_se,\
feas_rmse_at_inf_h,feas_rmse_at_inf_h_se,distance,distance_se,\
ref_inf_rmse,ref_feas_rmse,ref_distance,ref_inf_coverage,ref_feas_coverage,ref_inf_h,ref_feas_h,ref_inf_ci_length,ref_feas_ci_length";

    /// One row per cell. `feas_rmse` uses the feasible estimator's own
    /// bandwidth; table 1 compares `feas_rmse_at_inf_h` with its reference.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for c in &self.cells {
            let r = &c.report;
            let d = &r.design;
            let noise = match d.noise {
                Noise::Homoskedastic => "homoskedastic",
                Noise::Heteroskedastic => "heteroskedastic",
            };
            let mut row = vec![
                self.table.to_string(),
                d.design_id.to_string(),
                noise.to_string(),
                d.eta.to_string(),
            ];
            row.push(r.mean_m.to_string());
            row.push(r.failures.to_string());
            for s in [&r.infeasible, &r.feasible] {
                for st in [s.rmse, s.coverage, s.mean_h, s.ci_half_length] {
                    row.push(st.value.to_string());
                    row.push(st.mc_se.to_string());
                }
            }
            for st in [r.feasible_at_infeasible_h_rmse, r.rms_distance_to_infeasible] {
                row.push(st.value.to_string());
                row.push(st.mc_se.to_string());
            }
            let f = &c.reference;
            for v in [
                f.inf_rmse,
                f.feas_rmse,
                f.distance,
                f.inf_coverage,
                f.feas_coverage,
                f.inf_h,
                f.feas_h,
                f.inf_ci_length,
                f.feas_ci_length,
            ] {
                row.push(opt(v));
            }
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    /// Fixed-width text layout following the published tables.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "Table {} (n = {}, S = {}, seed = {})",
            self.table, self.n, self.reps, self.seed
        );
        match self.table {
            TableId::T1 => {
                let _ = writeln!(out, "values x100; reference in brackets");
                let _ = writeln!(
                    out,
                    "{:<16} {:<6} {:<11} {:>22} {:>22} {:>22}",
                    "noise", "eta", "estimator", "design 1", "design 2", "design 3"
                );
            }
            _ => {
                let _ = writeln!(out, "coverage %, mean h, mean CI half-length; reference in brackets");
                let _ = writeln!(
                    out,
                    "{:<16} {:<6} {:<11} {:>40} {:>40} {:>40}",
                    "noise", "eta", "estimator", "design 1", "design 2", "design 3"
                );
            }
        }
        for chunk in self.cells.chunks(3) {
            let d = &chunk[0].report.design;
            let noise = format!("{:?}", d.noise).to_lowercase();
            let rows: [(&str, Box<dyn Fn(&TableCell) -> String>); 2] = match self.table {
                TableId::T1 => [
                    (
                        "infeasible",
                        Box::new(|c: &TableCell| {
                            format!(
                                "{:.3} [{:.3}]",
                                100.0 * c.report.infeasible.rmse.value,
                                100.0 * c.reference.inf_rmse.unwrap_or(f64::NAN)
                            )
                        }),
                    ),
                    (
                        "feasible",
                        Box::new(|c: &TableCell| {
                            format!(
                                "{:.3} [{:.3}] {:.3} [{:.3}]",
                                100.0 * c.report.feasible_at_infeasible_h_rmse.value,
                                100.0 * c.reference.feas_rmse.unwrap_or(f64::NAN),
                                100.0 * c.report.rms_distance_to_infeasible.value,
                                100.0 * c.reference.distance.unwrap_or(f64::NAN)
                            )
                        }),
                    ),
                ],
                _ => [
                    (
                        "infeasible",
                        Box::new(|c: &TableCell| {
                            let s = &c.report.infeasible;
                            let r = &c.reference;
                            format!(
                                "{:.1} [{:.1}] {:.3} [{:.3}] {:.3} [{:.3}]",
                                100.0 * s.coverage.value,
                                100.0 * r.inf_coverage.unwrap_or(f64::NAN),
                                s.mean_h.value,
                                r.inf_h.unwrap_or(f64::NAN),
                                s.ci_half_length.value,
                                r.inf_ci_length.unwrap_or(f64::NAN)
                            )
                        }),
                    ),
                    (
                        "feasible",
                        Box::new(|c: &TableCell| {
                            let s = &c.report.feasible;
                            let r = &c.reference;
                            format!(
                                "{:.1} [{:.1}] {:.3} [{:.3}] {:.3} [{:.3}]",
                                100.0 * s.coverage.value,
                                100.0 * r.feas_coverage.unwrap_or(f64::NAN),
                                s.mean_h.value,
                                r.feas_h.unwrap_or(f64::NAN),
                                s.ci_half_length.value,
                                r.feas_ci_length.unwrap_or(f64::NAN)
                            )
                        }),
                    ),
                ],
            };
            let width = if self.table == TableId::T1 { 22 } else { 40 };
            for (name, f) in rows.iter() {
                let _ = write!(out, "{:<16} {:<6} {:<11}", noise, d.eta, name);
                for c in chunk {
                    let _ = write!(out, " {:>width$}", f(c));
                }
                out.push('\n');
            }
        }
        out
    }
}
