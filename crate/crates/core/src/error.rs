use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A numeric input outside the domain of the operation.
    #[error("{quantity} must be {requirement}, got {value}")]
    Domain {
        quantity: &'static str,
        requirement: &'static str,
        value: f64,
    },

    #[error("invalid atomic data: `{field}`: {reason}")]
    InvalidAtomicData { field: String, reason: String },

    #[error("failed to parse {what}: {reason}")]
    Parse { what: String, reason: String },

    #[error("ground manifold F={0} is not part of the atomic system")]
    UnknownManifold(u32),

    #[error("invalid spectrum: {0}")]
    InvalidSpectrum(String),

    #[error("invalid model parameters: {0}")]
    InvalidParameters(String),

    /// Two Jacobian columns are (numerically) parallel.
    #[error("singular Jacobian: parameters `{0}` and `{1}` cannot be separated by the data")]
    SingularJacobian(String, String),

    /// A Jacobian column vanishes identically.
    #[error("singular Jacobian: parameter `{0}` has no influence on the model")]
    DegenerateParameter(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("inconsistent data: {0}")]
    InconsistentData(String),

    #[error("missing required inputs: {}", .0.join(", "))]
    MissingInputs(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures that come from bad input rather than numerics.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::SingularJacobian(..) | Error::DegenerateParameter(_))
    }
}

pub(crate) fn ensure_positive(quantity: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain {
            quantity,
            requirement: "positive and finite",
            value,
        })
    }
}

pub(crate) fn ensure_non_negative(quantity: &'static str, value: f64) -> Result<()> {
    if value >= 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain {
            quantity,
            requirement: "non-negative and finite",
            value,
        })
    }
}
