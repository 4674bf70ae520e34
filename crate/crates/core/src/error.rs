use thiserror::Error;

/// Errors shared across the library.
#[derive(Debug, Error)]
pub enum CritError {
    /// The covariance model does not admit the requested derivative or
    /// spectral moment (e.g. Matern with p >= nu).
    #[error("insufficient smoothness: {0}")]
    InsufficientSmoothness(String),

    /// A joint Gaussian law is structurally degenerate (Cholesky failed
    /// beyond the jitter policy).
    #[error("degenerate joint Gaussian law: {0}")]
    DegenerateJoint(String),

    /// Closed-form intensities only exist for d <= 4.
    #[error("unsupported dimension {0} (closed forms exist for d <= 4)")]
    UnsupportedDimension(usize),

    /// Requested lattice exceeds the configured size cap.
    #[error("lattice of {requested} points exceeds cap {cap}")]
    LatticeTooLarge { requested: usize, cap: usize },

    /// Lattice smoothing bandwidth violates the convergence rate
    /// n^{-1} xi^{-d-3} <= 1.
    #[error("bandwidth rate violation: n={n}, xi={xi} gives n^-1 xi^-(d+3) = {rate}")]
    BandwidthRateViolation { n: usize, xi: f64, rate: f64 },

    /// Evaluation point lies outside the (possibly eroded) field window.
    #[error("point outside evaluation window")]
    OutOfWindow,

    /// Log-log slope fit requires strictly positive curve values.
    #[error("non-positive values in fit window")]
    NonPositiveValues,

    /// Estimator undefined on an empty pattern.
    #[error("empty point pattern")]
    EmptyPattern,

    /// The covariance tail is not integrable (random wave model), so
    /// asymptotic variance series do not converge.
    #[error("integrability condition violated: {0}")]
    IntegrabilityViolation(String),

    /// More than the tolerated share of extraction roots were numerically
    /// non-Morse.
    #[error("degenerate field: {0}")]
    DegenerateField(String),

    /// Invalid run configuration.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, CritError>;
