use std::path::PathBuf;

use thiserror::Error;

/// Exit statuses: 0 success, 2 usage, 3 data or schema, 4 numerical failure.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{}: {source}", path.display())]
    File { path: PathBuf, source: std::io::Error },

    #[error("{}: {source}", path.display())]
    Data { path: PathBuf, source: gridtopo::Error },

    #[error(transparent)]
    Core(#[from] gridtopo::Error),

    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data { source, .. } | CliError::Core(source) if source.is_numerical() => 4,
            _ => 3,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Attaches the file path to a core error.
pub fn at(path: impl Into<PathBuf>) -> impl FnOnce(gridtopo::Error) -> CliError {
    let path = path.into();
    move |source| match source {
        gridtopo::Error::Io(source) => CliError::File { path, source },
        source => CliError::Data { path, source },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Usage("x".into()).exit_code(), 2);
        assert_eq!(CliError::Core(gridtopo::Error::InvalidInput("x".into())).exit_code(), 3);
        assert_eq!(CliError::Core(gridtopo::Error::Divergence("x".into())).exit_code(), 4);
        assert_eq!(at("m.csv")(gridtopo::Error::SingularSystem("x".into())).exit_code(), 4);
        let missing = std::io::Error::from(std::io::ErrorKind::NotFound);
        assert!(matches!(at("m.csv")(missing.into()), CliError::File { .. }));
    }
}
