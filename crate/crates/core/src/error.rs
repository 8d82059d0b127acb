use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("gamma function pole at x = {0}")]
    Pole(f64),

    #[error("no convergence: {0}")]
    NoConvergence(String),

    #[error("matrix is singular to working precision")]
    Singular,

    /// The neutral coefficient alone already breaks the fixed-point argument.
    #[error("neutral term too strong: 4^(p-1) * L_g^p = {0} >= 1")]
    NeutralTooStrong(f64),

    #[error("criterion fails: k_stab = {0} >= 1, no admissible delta")]
    CriterionFails(f64),

    #[error("divergence: {0}")]
    Divergence(String),

    #[error("numeric failure on path {path}: {reason}")]
    PathFailure { path: usize, reason: String },

    #[error("invalid configuration at `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("{field}: {source}")]
    Field {
        field: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Attaches a field name to an error bubbling up from a component.
    pub fn in_field(self, field: &'static str) -> Self {
        Error::Field {
            field,
            source: Box::new(self),
        }
    }
}
