use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("time {t} is not a node of the path grid")]
    OffGrid { t: f64 },
    #[error("path covers [{t0}, {t1}] but [{need0}, {need1}] is required")]
    Coverage { t0: f64, t1: f64, need0: f64, need1: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("quadrature did not converge: {0}")]
    Quadrature(String),
    #[error("indeterminate: {0}")]
    Indeterminate(String),
    #[error("scale function is infinite at both ends")]
    InfiniteScale,
    #[error("river not located at s = {s}: {status}")]
    RiverNotLocated { s: f64, status: String },
    #[error("truncation bound {bound:e} exceeds tolerance {tol:e}")]
    Truncation { bound: f64, tol: f64 },
    #[error("i/o: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
