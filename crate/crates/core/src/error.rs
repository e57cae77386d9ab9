use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unit {unit}: missing observation for period {time}")]
    MissingCell { unit: String, time: String },

    #[error("non-finite value in {what}")]
    NonFiniteValue { what: String },

    #[error("duplicate observation for unit {unit} at period {time}")]
    DuplicateObservation { unit: String, time: String },

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid panel: {0}")]
    InvalidPanel(String),

    #[error("design matrix is rank deficient (smallest singular value {min_sv:e}, largest {max_sv:e})")]
    RankDeficient { min_sv: f64, max_sv: f64 },

    #[error(
        "cluster {0} is rank deficient: coefficients must be estimable cluster by cluster \
         for the randomization test"
    )]
    ClusterRankDeficient(usize),

    #[error("bandwidth {bandwidth} must be smaller than the number of periods {periods}")]
    BandwidthTooLarge { bandwidth: usize, periods: usize },

    #[error("bandwidth {bandwidth} does not fit in a block of {block_len} periods")]
    BandwidthTooLargeForBlock { bandwidth: usize, block_len: usize },

    #[error("degenerate long-run variance for unit {0}")]
    DegenerateDiagonal(usize),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("too few periods ({0}) to form at least two cross-validation blocks")]
    TooFewPeriods(usize),

    #[error("invalid tuning grid: {0}")]
    InvalidGrid(String),

    #[error("invalid threshold {0}: must lie in [0, 1]")]
    InvalidThreshold(f64),

    #[error("invalid restriction: {0}")]
    InvalidRestriction(String),

    #[error("single cluster: test undefined")]
    SingleCluster,

    #[error("orbit of 2^{0} sign changes is too large for full enumeration")]
    OrbitTooLarge(usize),

    #[error("non-positive variance estimate {0:e}")]
    NonPositiveVariance(f64),

    #[error("probability {0} outside (0, 1)")]
    DomainError(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown method `{0}`")]
    UnknownMethod(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
