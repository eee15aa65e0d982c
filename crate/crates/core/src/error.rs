use thiserror::Error;

/// Errors raised across the library.
///
/// Variants fall into two families: operational failures (bad input, numerical
/// breakdown) and falsifications, where sampled evidence contradicts a stability
/// property. [`Error::is_falsification`] separates the two so drivers can map
/// them to distinct exit statuses.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("syntax error at {line}:{column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("unknown identifier `{0}`")]
    UnknownIdentifier(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("domain error in `{expr}`: {reason}")]
    Domain { expr: String, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("not forward complete on horizon: state norm {norm:.3e} exceeded bound at t = {t}")]
    BlowUp { t: f64, norm: f64 },

    #[error("step size underflow at t = {t} (h = {h:.3e}); system may be stiff")]
    StepUnderflow { t: f64, h: f64 },

    #[error("integrator exceeded {0} steps")]
    TooManySteps(usize),

    #[error("origin not exponentially stable at first order: spectral abscissa {abscissa}")]
    NotHurwitz { abscissa: f64 },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("matrix is singular: {0}")]
    Singular(String),

    #[error("LES falsified at e0 = {witness:?}: {detail}")]
    LesFalsified { witness: Vec<f64>, detail: String },

    #[error("global attractivity falsified at e0 = {witness:?}: {detail}")]
    AttractivityFalsified { witness: Vec<f64>, detail: String },

    #[error("linearized decay falsified at e0 = {witness:?}: {detail}")]
    LinearizedDecayFalsified { witness: Vec<f64>, detail: String },

    #[error("bound likely unbounded on domain: {0}")]
    UnboundedBound(String),

    #[error("decay data insufficient: {0}")]
    DecayDataInsufficient(String),

    #[error("derivative step unreliable: {0}")]
    UnreliableDerivative(String),

    #[error("Dini estimate unreliable: {0}")]
    UnreliableDini(String),

    #[error("metric bound violated: {0}")]
    BoundViolation(String),

    #[error("geodesic left the certified domain at {0:?}")]
    EscapedDomain(Vec<f64>),

    #[error("integrability condition has no solution on this domain: closedness residual {residual:.3e} at {witness:?}")]
    NotIntegrable { witness: Vec<f64>, residual: f64 },

    #[error("controller hypothesis {condition} failed: {detail}")]
    HypothesisFailed { condition: u8, detail: String },

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// True when the error reports evidence against a stability property
    /// rather than an operational failure.
    pub fn is_falsification(&self) -> bool {
        matches!(
            self,
            Error::LesFalsified { .. }
                | Error::AttractivityFalsified { .. }
                | Error::LinearizedDecayFalsified { .. }
                | Error::NotHurwitz { .. }
                | Error::BlowUp { .. }
                | Error::HypothesisFailed { .. }
                | Error::NotIntegrable { .. }
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
