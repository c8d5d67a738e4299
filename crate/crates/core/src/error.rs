//! Error type shared by every module in this crate.

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong across the geometry, autodiff, model,
/// training, attack and defense layers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller violated a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Tensor shapes disagree for an operation.
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    /// An operation produced NaN or infinity.
    #[error("non-finite value produced by {op}")]
    NonFinite { op: String },

    /// A neighbor query asked for more results than the index can supply.
    #[error("k = {k} out of range: {available} candidate points available")]
    KOutOfRange { k: usize, available: usize },

    /// A cloud file failed to parse; `line` is 1-based.
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    /// An I/O failure with the path that caused it.
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// A configuration value is inconsistent or out of range.
    #[error("config error: {0}")]
    Config(String),

    /// A checkpoint could not be read, or disagrees with the caller.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// A normalized-error ratio was requested with a zero reference error.
    #[error("zero denominator in {context}")]
    ZeroDenominator { context: &'static str },

    /// Training produced a non-finite loss; the per-epoch trace up to the
    /// failure is preserved.
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize, trace: Vec<f64> },

    /// An attack produced a non-finite loss; the per-iteration total-loss
    /// trace up to the failure is preserved.
    #[error("attack aborted at iteration {iteration}: {reason}")]
    AttackAborted {
        iteration: usize,
        reason: String,
        trace: Vec<f64>,
    },

    /// Mutation was attempted on a frozen model.
    #[error("model is frozen")]
    Frozen,

    /// An operation that requires a frozen model got a trainable one.
    #[error("model must be frozen first")]
    NotFrozen,

    /// A defense filter removed every point of the cloud.
    #[error("defense removed every point of the cloud")]
    TotalRemoval,

    /// The critical set covers the whole cloud, leaving no complement.
    #[error("critical points cover the whole cloud; nothing left to keep")]
    CriticalCoversCloud,

    /// Target selection could not find enough candidates.
    #[error("insufficient pool: need {needed} candidates of class {class}, found {found}")]
    InsufficientPool {
        needed: usize,
        found: usize,
        class: String,
    },
}

impl Error {
    /// Wrap an I/O error with the path it occurred on.
    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
