use thiserror::Error;

/// Errors raised anywhere in the solver pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("point {center} has an empty neighborhood (horizon too small for the spacing)")]
    EmptyNeighborhood { center: usize },

    #[error("inadmissible reproducing space: {0}")]
    InadmissibleBasis(String),

    #[error("point {center}: {neighbors} neighbors cannot satisfy {required} independent constraints")]
    Underdetermined {
        center: usize,
        neighbors: usize,
        required: usize,
    },

    #[error("point {center}: degenerate neighbor {neighbor} at distance {distance:e}")]
    DegenerateNeighbor {
        center: usize,
        neighbor: usize,
        distance: f64,
    },

    #[error("point {center}: constraint residual {residual:e} exceeds tolerance")]
    ConstraintResidual { center: usize, residual: f64 },

    #[error("missing quadrature weights for interior point {0}")]
    MissingWeights(usize),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },

    #[error("singular linear system: {0}")]
    SingularSystem(String),

    #[error("linear solve residual {residual:e} exceeds bound {bound:e}")]
    SolveResidual { residual: f64, bound: f64 },

    #[error("iterative solver did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("at {context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Innermost error, skipping context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
