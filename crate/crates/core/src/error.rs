use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("no observation has positive kernel weight in the estimation window")]
    EmptyWindow,
    #[error("local design matrix is rank deficient (need at least {needed} distinct covariate values in the window)")]
    RankDeficient { needed: usize },
    #[error("instance too large for exhaustive enumeration: {n_eff} > {max}")]
    TooLarge { n_eff: usize, max: usize },
    #[error("weighted Nadaraya-Watson weights do not exist at a boundary point")]
    BoundaryUnsupported,
    #[error("bias constant is zero; the AMSE bandwidth is undefined")]
    DegenerateBias,
    #[error("bandwidth search failed at every candidate")]
    AllBandwidthsFailed,
    #[error("density estimate to the right of the cutoff is not positive ({0})")]
    DegenerateDensity(f64),
    #[error("selection rate in the trimmed arm is not positive ({0})")]
    DegenerateSelection(f64),
    #[error("scale function is not positive at x = {0}")]
    NegativeScale(f64),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
