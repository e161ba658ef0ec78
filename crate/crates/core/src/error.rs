use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameters: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("{0} is undefined on resonance (delta = 0)")]
    UndefinedOnResonance(&'static str),

    #[error("config error at line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("grid error: {0}")]
    Grid(String),

    #[error("non-finite value in {0}")]
    Corruption(String),

    #[error("pole hit in {0}: denominator magnitude below 1e-300")]
    Pole(&'static str),

    #[error("resolution guard violated: {0}")]
    Resolution(String),

    #[error("aliasing guard: spectral content at Nyquist is {ratio:.3e} of peak")]
    Aliasing { ratio: f64 },

    #[error("initial state violates support condition: {0}")]
    Support(String),

    #[error("missing analytic branch: {0}")]
    MissingAnalytic(String),

    #[error("golden mismatch: {0}")]
    Golden(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
