use std::path::PathBuf;

use serde_json::{json, Value};
use tce_core::{
    attach_ci, bandwidth_worstcase_rmse, estimate, lee_bandwidth, lee_curve, rd_bounds, rd_sensitivity, rot_smoothness,
    run_table, BandwidthChoice, BoundsEstimate, CiMethod, CiSpec, CurveRow, EstimatorKind, EvalSide, KernelKind,
    KernelSpec, LeeSetup, Monotonicity, RdSetup, Sample, TableId, TauMode, TruncSpec,
};

use crate::args::{Columns, EstimateArgs, LeeArgs, NumOr, RdArgs, SimArgs};
use crate::ingest::{ingest_csv, IngestError, Mapping};
use crate::CliError;

/// Result of a command in every output format.
pub struct Output {
    pub json: Value,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    /// Preformatted text, used instead of `rows` by the table format.
    pub text: Option<String>,
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn core(e: tce_core::Error) -> CliError {
    match e {
        tce_core::Error::InvalidInput(m) => CliError::Usage(m),
        other => CliError::Estimation(other.to_string()),
    }
}

fn require<T: Clone>(v: &Option<T>, flag: &str) -> Result<T, CliError> {
    v.clone()
        .ok_or_else(|| usage(format!("missing required option --{flag}")))
}

fn load(input: &Option<PathBuf>, cols: &Columns, with_ds: bool) -> Result<Sample, CliError> {
    let path = require(input, "input")?;
    let or = |v: &Option<String>, d: &str| v.clone().unwrap_or_else(|| d.to_string());
    let mapping = Mapping {
        x: or(&cols.x_col, "x"),
        y: or(&cols.y_col, "y"),
        ds: with_ds.then(|| (or(&cols.d_col, "d"), or(&cols.s_col, "s"))),
    };
    ingest_csv(&path, &mapping).map_err(|e| match e {
        IngestError::Io(_) => CliError::Io(e.to_string()),
        _ => CliError::Data(e.to_string()),
    })
}

fn kernel(name: &Option<String>) -> Result<KernelSpec, CliError> {
    let kind = match name {
        Some(k) => k.parse::<KernelKind>().map_err(core)?,
        None => KernelKind::Triangular,
    };
    Ok(KernelSpec::new(kind))
}

fn alpha(a: Option<f64>) -> Result<f64, CliError> {
    let a = a.unwrap_or(0.05);
    if a > 0.0 && a < 1.0 {
        Ok(a)
    } else {
        Err(usage(format!("--alpha must lie in (0, 1), got {a}")))
    }
}

fn positive(v: f64, flag: &str) -> Result<f64, CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(usage(format!("--{flag} must be positive, got {v}")))
    }
}

fn side(s: &Option<String>) -> Result<EvalSide, CliError> {
    match s.as_deref().map(str::to_ascii_lowercase).as_deref() {
        None | Some("two-sided") | Some("two_sided") => Ok(EvalSide::TwoSided),
        Some("left") => Ok(EvalSide::LeftOfCutoff),
        Some("right") => Ok(EvalSide::RightOfCutoff),
        Some(o) => Err(usage(format!("unknown side `{o}` (expected two-sided, left or right)"))),
    }
}

fn f(v: f64) -> String {
    v.to_string()
}

fn ci_spec(alpha: f64, method: &Option<String>, m: Option<f64>) -> Result<CiSpec, CliError> {
    let method = match method {
        Some(s) => s.parse::<CiMethod>().map_err(core)?,
        None if m.is_some() => CiMethod::BiasAware,
        None => CiMethod::Undersmooth,
    };
    if method == CiMethod::BiasAware && m.is_none() {
        return Err(usage("bias-aware intervals need --smoothness"));
    }
    CiSpec::new(alpha, method, m).map_err(core)
}

struct PointSetup {
    sample: Sample,
    x0: f64,
    spec: TruncSpec,
    kind: EstimatorKind,
    kernel: KernelSpec,
    side: EvalSide,
}

fn point_setup(a: &EstimateArgs) -> Result<PointSetup, CliError> {
    let x0 = require(&a.x0, "x0")?;
    let eta = require(&a.eta, "eta")?;
    let tail = match &a.tail {
        Some(t) => t.parse().map_err(core)?,
        None => Default::default(),
    };
    let spec = TruncSpec::new(eta, tail).map_err(core)?;
    let kind = match &a.estimator {
        Some(k) => k.parse::<EstimatorKind>().map_err(core)?,
        None => EstimatorKind::Orthogonal,
    };
    if kind == EstimatorKind::Infeasible {
        return Err(usage(
            "the infeasible estimator needs the true quantile function and is not available here",
        ));
    }
    let kernel = kernel(&a.kernel)?;
    let side = side(&a.side)?;
    let sample = load(&a.input, &a.columns, false)?;
    Ok(PointSetup {
        sample,
        x0,
        spec,
        kind,
        kernel,
        side,
    })
}

fn smoothness(v: &Option<NumOr>, p: &PointSetup) -> Result<Option<f64>, CliError> {
    match v {
        None => Ok(None),
        Some(NumOr::Num(m)) if *m >= 0.0 && m.is_finite() => Ok(Some(*m)),
        Some(NumOr::Word(w)) if w == "rot" => rot_smoothness(&p.sample, &p.spec).map(Some).map_err(core),
        Some(o) => Err(usage(format!(
            "--smoothness must be a non-negative number or `rot`, got `{o}`"
        ))),
    }
}

fn smoothness_or_rot(v: &Option<NumOr>, p: &PointSetup) -> Result<f64, CliError> {
    match smoothness(v, p)? {
        Some(m) => Ok(m),
        None => rot_smoothness(&p.sample, &p.spec).map_err(core),
    }
}

fn select_bandwidth(p: &PointSetup, m: f64) -> Result<BandwidthChoice, CliError> {
    bandwidth_worstcase_rmse(&p.sample, p.x0, &p.spec, m, &p.kernel, p.side, p.kind, None).map_err(core)
}

pub fn estimate_cmd(a: &EstimateArgs) -> Result<Output, CliError> {
    let p = point_setup(a)?;
    let alpha = alpha(a.alpha)?;
    let (m, choice) = match a.bandwidth.clone().unwrap_or(NumOr::Word("auto".into())) {
        NumOr::Word(w) if w == "auto" => {
            let m = smoothness_or_rot(&a.smoothness, &p)?;
            (Some(m), select_bandwidth(&p, m)?)
        }
        NumOr::Num(h) => {
            let h = positive(h, "bandwidth")?;
            (
                smoothness(&a.smoothness, &p)?,
                BandwidthChoice::fixed(h, p.sample.len()).map_err(core)?,
            )
        }
        NumOr::Word(w) => return Err(usage(format!("--bandwidth must be a number or `auto`, got `{w}`"))),
    };
    let first = match a.first_stage {
        Some(v) => positive(v, "first-stage")?,
        None => choice.h,
    };
    let ci = ci_spec(alpha, &a.ci, m)?;
    let est = estimate(&p.sample, p.x0, choice.h, first, &p.spec, p.kind, &p.kernel, p.side).map_err(core)?;
    let est = attach_ci(&est, &ci);
    let header = [
        "value",
        "se",
        "bias_bound",
        "ci_lo",
        "ci_hi",
        "h_used",
        "a_used",
        "method",
        "n_eff",
        "abs_weighted_sq_dist",
        "smoothness",
    ];
    let row = vec![
        f(est.value),
        f(est.se),
        f(est.bias_bound),
        f(est.ci_lo),
        f(est.ci_hi),
        f(est.h_used),
        est.a_used.map(f).unwrap_or_default(),
        est.method.to_string(),
        est.n_eff.to_string(),
        f(est.abs_weighted_sq_dist),
        m.map(f).unwrap_or_default(),
    ];
    Ok(Output {
        json: json!({ "estimate": est, "bandwidth": choice, "smoothness": m, "ci": ci }),
        header: header.iter().map(|s| s.to_string()).collect(),
        rows: vec![row],
        text: None,
    })
}

pub fn bandwidth_cmd(a: &EstimateArgs) -> Result<Output, CliError> {
    let p = point_setup(a)?;
    let m = smoothness_or_rot(&a.smoothness, &p)?;
    let choice = select_bandwidth(&p, m)?;
    let row = vec![
        f(choice.h),
        f(m),
        choice.objective.map(f).unwrap_or_default(),
        p.sample.len().to_string(),
    ];
    Ok(Output {
        json: json!({ "bandwidth": choice, "smoothness": m }),
        header: ["h", "smoothness", "objective", "n"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        rows: vec![row],
        text: None,
    })
}

const BOUNDS_HEADER: [&str; 16] = [
    "eta_hat",
    "lower",
    "lower_se",
    "upper",
    "upper_se",
    "cov_lower_upper",
    "lower_ci_lo",
    "lower_ci_hi",
    "upper_ci_lo",
    "upper_ci_hi",
    "joint_cv",
    "joint_lower_lo",
    "joint_lower_hi",
    "joint_upper_lo",
    "joint_upper_hi",
    "eta_rel_var",
];

fn bounds_cells(b: &BoundsEstimate) -> Vec<String> {
    [
        b.eta_hat,
        b.lower.value,
        b.lower.se,
        b.upper.value,
        b.upper.se,
        b.cov[0][1],
        b.lower.ci_lo,
        b.lower.ci_hi,
        b.upper.ci_lo,
        b.upper.ci_hi,
        b.joint_cv,
        b.joint_ci[0].0,
        b.joint_ci[0].1,
        b.joint_ci[1].0,
        b.joint_ci[1].1,
        b.eta_rel_var,
    ]
    .map(f)
    .to_vec()
}

pub fn bounds_rd_cmd(a: &RdArgs) -> Result<Output, CliError> {
    let cutoff = require(&a.cutoff, "cutoff")?;
    let h = positive(require(&a.bandwidth, "bandwidth")?, "bandwidth")?;
    let tau_mode = match a.tau.clone().unwrap_or(NumOr::Word("auto".into())) {
        NumOr::Word(w) if w == "auto" => TauMode::Estimated,
        NumOr::Num(t) => TauMode::Fixed(t),
        NumOr::Word(w) => return Err(usage(format!("--tau must be `auto` or a number, got `{w}`"))),
    };
    let mut setup = RdSetup::new(cutoff, h, tau_mode, kernel(&a.kernel)?).map_err(core)?;
    if let Some(fs) = a.first_stage {
        setup = setup.with_first_stage(fs).map_err(core)?;
    }
    let ci = ci_spec(alpha(a.alpha)?, &None, a.smoothness)?;
    let sample = load(&a.input, &a.columns, false)?;
    let main = rd_bounds(&sample, &setup, &ci).map_err(core)?;
    let grid = a.tau_grid.clone().unwrap_or_default();
    let sens = rd_sensitivity(&sample, &setup, &grid, &ci).map_err(core)?;
    let mut header = vec!["row".to_string(), "tau".to_string()];
    header.extend(BOUNDS_HEADER.iter().map(|s| s.to_string()));
    let mut rows = Vec::with_capacity(1 + sens.len());
    let mut first = vec!["main".to_string(), f(main.trimmed_share())];
    first.extend(bounds_cells(&main));
    rows.push(first);
    for (t, b) in grid.iter().zip(&sens) {
        let mut r = vec!["sensitivity".to_string(), f(*t)];
        r.extend(bounds_cells(b));
        rows.push(r);
    }
    let sensitivity: Vec<Value> = grid
        .iter()
        .zip(&sens)
        .map(|(t, b)| json!({ "tau": t, "bounds": b }))
        .collect();
    Ok(Output {
        json: json!({
            "bounds": main,
            "tau_hat": main.trimmed_share(),
            "ci": ci,
            "sensitivity": sensitivity,
        }),
        header,
        rows,
        text: None,
    })
}

pub fn bounds_lee_cmd(a: &LeeArgs) -> Result<Output, CliError> {
    let grid = require(&a.grid, "grid")?;
    if grid.is_empty() {
        return Err(usage("--grid needs at least one point"));
    }
    let kernel = kernel(&a.kernel)?;
    let monotonicity = match &a.monotonicity {
        Some(m) => m.parse::<Monotonicity>().map_err(core)?,
        None => Monotonicity::default(),
    };
    let ci = ci_spec(alpha(a.alpha)?, &None, a.smoothness)?;
    let sample = load(&a.input, &a.columns, true)?;
    let (h, choice) = match a.bandwidth.clone().unwrap_or(NumOr::Word("auto".into())) {
        NumOr::Word(w) if w == "auto" => {
            let mut sorted = grid.clone();
            sorted.sort_by(f64::total_cmp);
            let c = lee_bandwidth(&sample, sorted[sorted.len() / 2], &kernel, monotonicity).map_err(core)?;
            (c.h, Some(c))
        }
        NumOr::Num(h) => (positive(h, "bandwidth")?, None),
        NumOr::Word(w) => return Err(usage(format!("--bandwidth must be a number or `auto`, got `{w}`"))),
    };
    let mut setup = LeeSetup::new(grid, h, kernel).map_err(core)?;
    setup.monotonicity = monotonicity;
    setup.selection_smoothness = a.selection_smoothness;
    if let Some(fs) = a.first_stage {
        setup.a = Some(positive(fs, "first-stage")?);
    }
    let rows_out: Vec<CurveRow> = lee_curve(&sample, &setup, &ci);
    let mut header = vec!["x0".to_string(), "p_hat".to_string()];
    header.extend(BOUNDS_HEADER.iter().map(|s| s.to_string()));
    header.push("error".into());
    let rows = rows_out
        .iter()
        .map(|r| {
            let mut cells = vec![f(r.x0)];
            match &r.bounds {
                Some(b) => {
                    cells.push(f(b.trimmed_share()));
                    cells.extend(bounds_cells(b));
                    cells.push(String::new());
                }
                None => {
                    cells.extend(std::iter::repeat_n(String::new(), 1 + BOUNDS_HEADER.len()));
                    cells.push(r.error.clone().unwrap_or_default());
                }
            }
            cells
        })
        .collect();
    Ok(Output {
        json: json!({ "bandwidth": h, "bandwidth_choice": choice, "ci": ci, "rows": rows_out }),
        header,
        rows,
        text: None,
    })
}

pub struct SimOutput {
    pub output: Output,
    pub csv: String,
}

pub fn simulate_cmd(a: &SimArgs) -> Result<SimOutput, CliError> {
    let table: TableId = require(&a.table, "table")?.to_string().parse().map_err(core)?;
    let reps = a.reps.unwrap_or(10_000);
    let n = a.n.unwrap_or(1000);
    if reps == 0 || n == 0 {
        return Err(usage("--reps and --n must be at least 1"));
    }
    let seed = a.seed.unwrap_or(1);
    let threads = a
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |v| v.get()));
    let report = run_table(table, reps, n, seed, threads).map_err(core)?;
    let csv = report.to_csv();
    let mut lines = csv.lines();
    let header = lines
        .next()
        .unwrap_or_default()
        .split(',')
        .map(str::to_string)
        .collect();
    let rows = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
    Ok(SimOutput {
        output: Output {
            json: json!({ "table": report }),
            header,
            rows,
            text: Some(report.to_text()),
        },
        csv,
    })
}
