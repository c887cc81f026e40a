use thiserror::Error;

/// Errors raised across mesh construction, assembly and the nonlinear solvers.
#[derive(Debug, Error)]
pub enum SosmError {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("index {index} out of range (len {len})")]
    OutOfRange { index: usize, len: usize },
    #[error("unsupported element: {0}")]
    Unsupported(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("nonpositive {quantity} = {value:e} in cell {cell}")]
    Positivity {
        quantity: &'static str,
        value: f64,
        cell: usize,
    },
    #[error("boundary data incompatible: species {species} defect {defect:e}")]
    Incompatible { species: usize, defect: f64 },
    #[error("singular matrix: {0}")]
    Singular(String),
    #[error("linear solve inaccurate: relative residual {0:e}")]
    InaccurateSolve(f64),
    #[error("no convergence after {iterations} iterations (last norm {norm:e})")]
    NoConvergence { iterations: usize, norm: f64 },
    #[error("newton diverged at iteration {iteration}: residual {norm:e}")]
    Diverged { iteration: usize, norm: f64 },
    #[error("continuation failed at s = {scale}: {source}")]
    Continuation {
        scale: f64,
        #[source]
        source: Box<SosmError>,
    },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, SosmError>;
