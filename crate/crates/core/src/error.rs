use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Autodiff(#[from] symgnn_autodiff::Error),
    /// Bad user input: configs, data files, arguments.
    #[error("{0}")]
    Invalid(String),
    #[error("{file}:{line}: {field}: {msg}")]
    Schema {
        file: String,
        line: usize,
        field: String,
        msg: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err($crate::error::Error::Invalid(format!($($fmt)+)));
        }
    };
}
pub(crate) use ensure;
