//! Nonparametric estimation of conditional truncated (tail) means with
//! a two-stage local linear estimator, robust inference, and sharp bounds
//! for regression discontinuity designs with manipulation and for sample
//! selection with a continuous running variable.

pub mod bounds_lee;
pub mod bounds_rd;
pub mod error;
pub mod estimator;
pub mod inference;
pub mod kernels;
mod linalg;
pub mod locfit;
pub mod mc;
pub mod normal;
pub mod quantfit;
pub mod sample;

pub use bounds_lee::{lee_bandwidth, lee_bounds, lee_curve, selection_rate, CurveRow, LeeSetup, Monotonicity};
pub use bounds_rd::{
    boundary_density, manipulation_share, rd_bounds, rd_estimate, rd_sensitivity, BoundsEstimate, CutoffSide,
    EtaComponents, RdSetup, TauMode,
};
pub use error::{Error, Result};
pub use estimator::{
    el_weights, estimate, estimate_derivative, estimate_infeasible, psi, wnw_estimate, Estimate, EstimatorKind, Tail,
    TruncSpec,
};
pub use inference::{
    attach_ci, bandwidth_amse, bandwidth_worstcase_rmse, build_ci, estimate_auto, folded_normal_cv, rot_smoothness,
    BandwidthChoice, CiMethod, CiSpec, Criterion,
};
pub use kernels::{KernelConstants, KernelKind, KernelSpec, MomentDomain, Position};
pub use locfit::{ehw_variance, local_poly_fit, worstcase_bias, LocalFit};
pub use mc::{gen_sample, run_cell, run_table, truth, McDesign, McReport, Noise, TableId};
pub use quantfit::{global_poly_quantile, local_quantile_fit, quantile_fit_oracle, QuantileFit};
pub use sample::{EvalSide, Sample};
