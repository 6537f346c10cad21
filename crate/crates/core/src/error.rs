use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("window error: cycle {cell_id}/{cycle_index} has {available} samples, window needs {needed}")]
    Window { cell_id: String, cycle_index: usize, needed: usize, available: usize },

    #[error("degenerate spectrum: {requested} modes requested but only {found} local maxima found; retry with a smaller mode count")]
    Degenerate { requested: usize, found: usize },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("neighbourhood graph is disconnected (component sizes {sizes:?}); increase k")]
    Disconnected { sizes: Vec<usize> },
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) | Error::Csv(_) => 1,
            Error::Config(_) | Error::Usage(_) => 2,
            Error::Schema(_)
            | Error::Data(_)
            | Error::Window { .. }
            | Error::Degenerate { .. }
            | Error::Disconnected { .. }
            | Error::UndefinedCorrelation(_) => 3,
            Error::Numeric(_) | Error::Training(_) => 4,
        }
    }
}
