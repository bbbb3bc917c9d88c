use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A quadrature did not converge or produced a non-finite value.
    #[error("integration failure in {component}: {reason}")]
    Quadrature { component: String, reason: String },

    /// A model precondition or invariant was violated beyond floating-point slack.
    #[error("model contract violated: {0}")]
    Contract(String),

    /// A scenario or spec-construction problem; `key` points at the offending field.
    #[error("configuration error at `{key}`: {reason}")]
    Config { key: String, reason: String },

    /// The SDE integrator produced a non-finite state.
    #[error("integration blow-up at t = {t}; last valid state {state:?}")]
    Blowup { t: f64, state: Vec<f64> },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config { key: key.into(), reason: reason.into() }
    }

    pub fn quadrature(component: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Quadrature { component: component.into(), reason: reason.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
