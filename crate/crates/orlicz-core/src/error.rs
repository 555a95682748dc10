//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the numerical pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A potential violated a construction invariant (constant piece,
    /// non-monotone expression, overlapping intervals, ...).
    #[error("invalid potential: {0}")]
    InvalidPotential(String),

    /// A piece integral could not be evaluated (overflow or non-finite
    /// endpoint); carries the index of the offending piece.
    #[error("integration failed on piece {piece}: {reason}")]
    PieceIntegral { piece: usize, reason: String },

    /// An argument was outside the operation's domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Requested a tilt at a level at or above the domain supremum.
    #[error("no tilt exists: t = {t} is not below t_sup = {t_sup}")]
    NoTilt { t: f64, t_sup: f64 },

    /// The partition function diverges (or cannot be certified) at this tilt.
    #[error("partition function diverges at alpha = {alpha}: {reason}")]
    PartitionDiverged { alpha: f64, reason: String },

    /// A grid cell holds a non-integrable singularity of the pushforward.
    #[error("non-integrable singularity in grid cell {cell} (y in [{y_lo}, {y_hi}])")]
    NonIntegrableSingularity { cell: usize, y_lo: f64, y_hi: f64 },

    /// FFT convolution produced too much negative ringing.
    #[error("grid too coarse for k = {k}: clipped mass {clip_mass:.3e} >= 1e-8")]
    GridTooCoarse { k: usize, clip_mass: f64 },

    /// Tilted truncation requested below the mean of the base density.
    #[error("truncation below the mean has no tilt: L = {l} <= mean = {mean}")]
    TruncationBelowMean { l: f64, mean: f64 },

    /// The (N, k, t) point was handed to the wrong regime routine.
    #[error("regime mismatch: {0}")]
    RegimeMismatch(String),

    /// A conditioning event has no mass on the grid.
    #[error("conditioning event has zero mass on the grid (t = {t}, n = {n})")]
    EmptyEvent { t: f64, n: usize },

    /// A decay-rate fit failed its quality gate.
    #[error("tail rate fit failed: {0}")]
    TailFit(String),

    /// Rejection sampling acceptance rate collapsed.
    #[error("rejection acceptance below {threshold:.1e} over {proposals} proposals; use the coordinate Gibbs sampler")]
    RejectionStalled { threshold: f64, proposals: u64 },

    /// Invalid experiment configuration (CLI / JSON config).
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 2 for validation errors, 3 for
    /// numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Domain(_) | Error::InvalidPotential(_) | Error::Io(_) | Error::Json(_) => 2,
            _ => 3,
        }
    }
}
