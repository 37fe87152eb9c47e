use std::path::PathBuf;

use bnnlab_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = LabError> = std::result::Result<T, E>;

impl LabError {
    /// Process exit code: 2 config, 3 data (including IO), 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Config(_) => 2,
            LabError::Data(_) | LabError::Io { .. } => 3,
            LabError::Numerical(_) => 4,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LabError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LabError::Config(_) => "config",
            LabError::Data(_) | LabError::Io { .. } => "data",
            LabError::Numerical(_) => "numerical",
        }
    }
}

impl From<CoreError> for LabError {
    fn from(e: CoreError) -> Self {
        let msg = e.to_string();
        match e {
            CoreError::InvalidArgument(_) | CoreError::Unknown { .. } | CoreError::TooFewSamples { .. } => LabError::Config(msg),
            CoreError::Shape { .. } | CoreError::InvalidShape(_) | CoreError::NonScalar(_) => LabError::Data(msg),
            CoreError::NonFinite(_)
            | CoreError::NonFinitePotential { .. }
            | CoreError::NotPositiveDefinite { .. }
            | CoreError::NotConverged { .. }
            | CoreError::VarianceCollapse { .. }
            | CoreError::Cholesky { .. }
            | CoreError::Diverged { .. } => LabError::Numerical(msg),
        }
    }
}

impl From<csv::Error> for LabError {
    fn from(e: csv::Error) -> Self {
        LabError::Data(e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(LabError::from(CoreError::Cholesky { jitter: 1e-6 }).exit_code(), 4);
        assert_eq!(LabError::from(CoreError::InvalidArgument("x".into())).exit_code(), 2);
        assert_eq!(LabError::from(CoreError::InvalidShape("x".into())).exit_code(), 3);
        assert_eq!(LabError::io("a", std::io::Error::other("gone")).exit_code(), 3);
    }
}
