use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid interval: r_end ({end}) must exceed r_start ({start})")]
    InvalidInterval { start: f64, end: f64 },
    #[error("invalid element count {0}: need at least one element")]
    InvalidElementCount(usize),
    #[error("singular convection assembly requires a mesh starting at r = 0, got {0}")]
    RequiresOrigin(f64),
    #[error("regular convection assembly requires r_start > 0, got {0}")]
    RequiresPositiveStart(f64),
    #[error("matrix is singular (pivot {pivot:e} at row {row})")]
    SingularMatrix { row: usize, pivot: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("negative concentration {0}")]
    NegativeConcentration(f64),
    #[error("ER concentration {0} is not positive")]
    NonpositiveErConcentration(f64),
    #[error("probability {0} outside [0, 1]")]
    ProbabilityOutOfRange(f64),
    #[error("buffer concentration {b} outside [0, {b0}]")]
    BufferOutOfRange { b: f64, b0: f64 },

    #[error("state invariant violated: {0}")]
    StateInvariant(String),
    #[error("boundary iteration did not converge at t = {t} after {iterations} iterations")]
    SolverDivergence { t: f64, iterations: usize },

    #[error("non-finite network input")]
    NonFiniteInput,
    #[error("empty batch")]
    EmptyBatch,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("corrupt file: {0}")]
    CorruptFile(String),
    #[error("invalid signal: {0}")]
    InvalidSignal(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures rooted in the numerics rather than input or I/O.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::SingularMatrix { .. }
                | Error::StateInvariant(_)
                | Error::SolverDivergence { .. }
                | Error::NonFiniteLoss { .. }
                | Error::NegativeConcentration(_)
                | Error::NonpositiveErConcentration(_)
                | Error::ProbabilityOutOfRange(_)
                | Error::BufferOutOfRange { .. }
        )
    }
}
