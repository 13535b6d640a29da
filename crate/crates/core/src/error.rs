use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("invalid manifest {path}: {msg}")]
    Manifest { path: PathBuf, msg: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("singular admittance matrix Y_LL")]
    SingularAdmittance,

    #[error("unassigned phase {0} in area partition")]
    UnassignedPhase(usize),

    #[error("area partition references unknown phase {0}")]
    UnknownPhase(usize),

    #[error("invalid area partition: {0}")]
    Partition(String),

    #[error("unknown area {0}")]
    UnknownArea(usize),

    #[error("power flow diverged after {iterations} iterations (residual {residual:e})")]
    DivergedFlow { iterations: usize, residual: f64 },

    #[error("degenerate linearization: w has a zero entry at phase {phase}")]
    DegenerateLinearization { phase: usize },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("unsupported configuration: {0}")]
    UnsupportedConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite iterate at iteration {iteration}")]
    Divergence { iteration: usize },

    #[error("singular normal equations in {0} update")]
    SingularNormalMatrix(&'static str),

    #[error("protocol violation: area {from} addressed non-neighbor {to}")]
    Protocol { from: usize, to: usize },

    #[error("power iteration did not converge after {0} steps")]
    PowerIteration(usize),

    #[error("zero true voltage magnitude at time {t}, phase {phase}")]
    ZeroMagnitude { t: usize, phase: usize },

    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
