use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

/// A number or a keyword such as `auto` or `rot`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NumOr {
    Num(f64),
    Word(String),
}

impl FromStr for NumOr {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let t = s.trim();
        if t.is_empty() {
            return Err("empty value".into());
        }
        Ok(match t.parse::<f64>() {
            Ok(v) => NumOr::Num(v),
            Err(_) => NumOr::Word(t.to_ascii_lowercase()),
        })
    }
}

impl fmt::Display for NumOr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NumOr::Num(v) => write!(f, "{v}"),
            NumOr::Word(w) => f.write_str(w),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "tce",
    version,
    about = "Truncated conditional means, bounds, and simulations"
)]
pub struct Cli {
    /// TOML file with default option values; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output format.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,

    /// Write the output here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
    Table,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Truncated conditional mean at a point.
    Estimate(EstimateArgs),
    /// Worst-case RMSE bandwidth for the truncated mean at a point.
    Bandwidth(EstimateArgs),
    /// Bounds in a regression discontinuity design with manipulation.
    BoundsRd(RdArgs),
    /// Conditional bounds under sample selection.
    BoundsLee(LeeArgs),
    /// Monte Carlo tables.
    Simulate(SimArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Estimate(_) => "estimate",
            Command::Bandwidth(_) => "bandwidth",
            Command::BoundsRd(_) => "bounds-rd",
            Command::BoundsLee(_) => "bounds-lee",
            Command::Simulate(_) => "simulate",
        }
    }
}

/// Column names of the input file.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct Columns {
    /// Covariate / running variable column [default: x]
    #[arg(long)]
    pub x_col: Option<String>,
    /// Outcome column [default: y]
    #[arg(long)]
    pub y_col: Option<String>,
    /// Treatment indicator column [default: d]
    #[arg(long)]
    pub d_col: Option<String>,
    /// Selection indicator column [default: s]
    #[arg(long)]
    pub s_col: Option<String>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimateArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub columns: Columns,
    /// Evaluation point.
    #[arg(long)]
    pub x0: Option<f64>,
    /// Kept mass in (0, 1).
    #[arg(long)]
    pub eta: Option<f64>,
    /// lower or upper [default: lower]
    #[arg(long)]
    pub tail: Option<String>,
    /// orthogonal, nm, ts or wnw [default: orthogonal]
    #[arg(long)]
    pub estimator: Option<String>,
    /// Second-stage bandwidth, or `auto` for the worst-case RMSE choice [default: auto]
    #[arg(long)]
    pub bandwidth: Option<NumOr>,
    /// First-stage quantile bandwidth [default: the second-stage bandwidth]
    #[arg(long)]
    pub first_stage: Option<f64>,
    /// Bound on the second derivative of the truncated mean, or `rot`.
    #[arg(long)]
    pub smoothness: Option<NumOr>,
    /// 1 − confidence level [default: 0.05]
    #[arg(long)]
    pub alpha: Option<f64>,
    /// bias-aware or undersmooth [default: bias-aware with a smoothness bound]
    #[arg(long)]
    pub ci: Option<String>,
    /// triangular, uniform or epanechnikov [default: triangular]
    #[arg(long)]
    pub kernel: Option<String>,
    /// two-sided, left or right [default: two-sided]
    #[arg(long)]
    pub side: Option<String>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct RdArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub columns: Columns,
    #[arg(long)]
    pub cutoff: Option<f64>,
    /// Bandwidth of all components.
    #[arg(long)]
    pub bandwidth: Option<f64>,
    /// First-stage quantile bandwidth [default: --bandwidth]
    #[arg(long)]
    pub first_stage: Option<f64>,
    /// Manipulation share: `auto` to estimate it, or a value in [0, 1) [default: auto]
    #[arg(long)]
    pub tau: Option<NumOr>,
    /// Comma-separated fixed shares for a sensitivity table.
    #[arg(long, value_delimiter = ',')]
    pub tau_grid: Option<Vec<f64>>,
    /// Bound on second derivatives for bias-aware intervals.
    #[arg(long)]
    pub smoothness: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub kernel: Option<String>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct LeeArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub columns: Columns,
    /// Comma-separated evaluation points.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
    /// Bandwidth, or `auto` [default: auto]
    #[arg(long)]
    pub bandwidth: Option<NumOr>,
    #[arg(long)]
    pub first_stage: Option<f64>,
    /// treatment-encourages or treatment-discourages [default: treatment-encourages]
    #[arg(long)]
    pub monotonicity: Option<String>,
    /// Bound on second derivatives of the outcome means for bias-aware intervals.
    #[arg(long)]
    pub smoothness: Option<f64>,
    /// Bound on second derivatives of the selection rates.
    #[arg(long)]
    pub selection_smoothness: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub kernel: Option<String>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct SimArgs {
    /// 1, 2 or f1
    #[arg(long)]
    pub table: Option<NumOr>,
    /// Replications per cell [default: 10000]
    #[arg(long)]
    pub reps: Option<usize>,
    /// Sample size [default: 1000]
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads [default: all cores]
    #[arg(long)]
    pub threads: Option<usize>,
}
