use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("position {x} lies outside the domain [{a}, {b}]")]
    Domain { x: f64, a: f64, b: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("coefficient not admissible at x = {x}: k = {k}")]
    Coefficient { x: f64, k: f64 },

    #[error("grid spacing {spacing} does not resolve scale {scale} (need at most {required})")]
    Resolution {
        spacing: f64,
        scale: f64,
        required: f64,
    },

    #[error("source term is not solvable on the torus: mean of f is {mean}")]
    Solvability { mean: f64 },

    #[error("covariance error: {0}")]
    Covariance(String),

    #[error("quadrature covers too little mass: boundary tail estimate {tail}")]
    Coverage { tail: f64 },

    #[error("degenerate functional family: mean squared response {0}")]
    DegenerateFunctionals(f64),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidArgument(msg()))
    }
}
