use std::fmt;

/// Errors raised anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("index out of range: {0}")]
    Index(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("non-finite value: {0}")]
    Numeric(String),
    #[error("token id {id} outside vocabulary of size {size}")]
    Vocabulary { id: usize, size: usize },
    #[error("sequence length {len} exceeds context window {max}")]
    ContextOverflow { len: usize, max: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid UTF-8 input: {0}")]
    Encoding(#[from] std::str::Utf8Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse failure class, used by the command line front end to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Usage,
    Config,
    Data,
    Numeric,
}

impl Category {
    pub fn exit_code(self) -> i32 {
        match self {
            Category::Usage => 2,
            Category::Config => 3,
            Category::Data => 4,
            Category::Numeric => 5,
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::Usage => "usage",
            Category::Config => "config",
            Category::Data => "data",
            Category::Numeric => "numeric",
        })
    }
}

impl Error {
    pub fn category(&self) -> Category {
        match self {
            Error::Parse(_) => Category::Usage,
            Error::Config(_) => Category::Config,
            Error::Numeric(_) => Category::Numeric,
            Error::Data(_)
            | Error::Encoding(_)
            | Error::Io { .. }
            | Error::Vocabulary { .. }
            | Error::ContextOverflow { .. } => Category::Data,
            Error::Dimension { .. } | Error::Index(_) | Error::Contract(_) => Category::Config,
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
