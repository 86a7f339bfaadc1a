use std::fmt;
use std::path::PathBuf;

/// Process exit codes. Scripts depend on these.
pub mod code {
    pub const OK: i32 = 0;
    pub const FAILURE: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const IO: i32 = 3;
    pub const SOLVABILITY: i32 = 4;
    pub const DEGENERACY: i32 = 5;
    pub const OVER_REJECTION: i32 = 6;
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io { path: PathBuf, source: std::io::Error },
    Json { path: PathBuf, source: serde_json::Error },
    Core(nrsfm::Error),
    /// Every sweep trial failed.
    AllTrialsFailed(usize),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    pub fn exit_code(&self) -> i32 {
        use nrsfm::Error as E;
        match self {
            CliError::Usage(_) => code::USAGE,
            CliError::Io { .. } | CliError::Json { .. } => code::IO,
            CliError::AllTrialsFailed(_) => code::FAILURE,
            CliError::Core(e) => match e.root() {
                E::Argument(_) | E::Precondition(_) => code::USAGE,
                E::Io(_) | E::Parse { .. } => code::IO,
                E::Solvability { .. } | E::DegenerateFrame { .. } => code::SOLVABILITY,
                E::DegenerateMotion(_) => code::DEGENERACY,
                E::OverRejection(_) => code::OVER_REJECTION,
                _ => code::FAILURE,
            },
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Io { path, source } => write!(f, "{}: {source}", path.display()),
            CliError::Json { path, source } => write!(f, "{}: {source}", path.display()),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::AllTrialsFailed(n) => write!(f, "all {n} sweep trials failed"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<nrsfm::Error> for CliError {
    fn from(e: nrsfm::Error) -> Self {
        CliError::Core(e)
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
