use thiserror::Error;

/// Everything that can go wrong inside the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("frame {frame} has no usable observations")]
    DegenerateFrame { frame: usize },

    #[error("{what} {index} is underdetermined: {have} observations, need at least {need}")]
    Solvability {
        what: &'static str,
        index: usize,
        have: usize,
        need: usize,
    },

    #[error("degenerate motion: {0}")]
    DegenerateMotion(String),

    #[error("over-rejection: {0}")]
    OverRejection(String),

    #[error("statistics: {0}")]
    Statistics(String),

    #[error("alignment: {0}")]
    Alignment(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A failure inside the robust pipeline, tagged with the step that raised it.
    #[error("pipeline step {step}: {source}")]
    Pipeline {
        step: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Strips any pipeline wrapping and returns the underlying error.
    pub fn root(&self) -> &Error {
        match self {
            Error::Pipeline { source, .. } => source.root(),
            e => e,
        }
    }

    /// Pipeline step that failed, if this error came out of the robust pipeline.
    pub fn step(&self) -> Option<usize> {
        match self {
            Error::Pipeline { step, .. } => Some(*step),
            _ => None,
        }
    }

    pub(crate) fn at_step(self, step: usize) -> Error {
        Error::Pipeline {
            step,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
