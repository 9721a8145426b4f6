use rot_core::RotError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Rot(#[from] RotError),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    /// 2 usage, 3 I/O, 4 convergence, 5 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
            CliError::Json(e) if e.is_io() => 3,
            CliError::Json(_) => 2,
            CliError::Rot(e) => match e {
                RotError::InvalidInput(_) | RotError::Unsupported(_) => 2,
                RotError::Io(_) | RotError::Csv(_) | RotError::Image(_) => 3,
                RotError::Convergence { .. } | RotError::TooManyFailures { .. } => 4,
                RotError::Replicate { source, .. } => CliError::Rot(clone_kind(source)).exit_code(),
                RotError::Domain { .. } | RotError::ReductionRequired | RotError::Numerical(_) => 5,
            },
        }
    }
}

fn clone_kind(e: &RotError) -> RotError {
    match e {
        RotError::Convergence { iterations, residual } => RotError::Convergence {
            iterations: *iterations,
            residual: *residual,
        },
        RotError::InvalidInput(m) => RotError::InvalidInput(m.clone()),
        _ => RotError::Numerical(e.to_string()),
    }
}
