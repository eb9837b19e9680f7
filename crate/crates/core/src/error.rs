use std::fmt;

/// Coarse failure class, printed by the CLI as a stable token.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Category {
    InvalidInput,
    DegenerateGroup,
    InvalidParameter,
    Config,
    Spec,
    Dataset,
    Resolution,
    Format,
    Io,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::InvalidInput => "invalid-input",
            Category::DegenerateGroup => "degenerate-group",
            Category::InvalidParameter => "invalid-parameter",
            Category::Config => "config",
            Category::Spec => "spec",
            Category::Dataset => "dataset",
            Category::Resolution => "resolution",
            Category::Format => "format",
            Category::Io => "io",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("degenerate group: {0}")]
    DegenerateGroup(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("config: {0}")]
    Config(String),
    #[error("scene spec: {0}")]
    Spec(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("resolution mismatch: {0}")]
    Resolution(String),
    #[error("format: {0}")]
    Format(String),
    #[error("io: {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn category(&self) -> Category {
        match self {
            Error::InvalidInput(_) => Category::InvalidInput,
            Error::DegenerateGroup(_) => Category::DegenerateGroup,
            Error::InvalidParameter(_) => Category::InvalidParameter,
            Error::Config(_) => Category::Config,
            Error::Spec(_) => Category::Spec,
            Error::Dataset(_) => Category::Dataset,
            Error::Resolution(_) => Category::Resolution,
            Error::Format(_) => Category::Format,
            Error::Io { .. } => Category::Io,
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
