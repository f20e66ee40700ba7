use thiserror::Error;

/// Errors surfaced by the library.
///
/// Domain violations are typed rather than returned as NaN so that
/// estimators can distinguish bankruptcy and parameter-regime failures
/// from bugs.
#[derive(Debug, Error)]
pub enum Error {
    /// Argument outside the mathematical domain of the operation.
    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    /// Operation not defined for this variant (e.g. density of a measure
    /// with atoms).
    #[error("unsupported operation {op}: {detail}")]
    Unsupported { op: &'static str, detail: String },

    /// Both the discount rate and the hazard rate are zero: the weighting
    /// measure would be identically zero.
    #[error("degenerate weighting measure: both rates are zero")]
    DegenerateMeasure,

    /// The dual problem is not finitely valued for these parameters; the
    /// standing assumption v(y) < infinity fails.
    #[error("infinite dual value: {detail} (the assumption v(y) < \u{221e} fails)")]
    InfiniteDual { detail: String },

    /// A strategy or control evaluated to a non-finite number.
    #[error("control evaluation error in {op}: {detail}")]
    Control { op: &'static str, detail: String },

    /// Path bundles with mismatched shapes or conventions were combined.
    #[error("structural error in {op}: {detail}")]
    Structural { op: &'static str, detail: String },

    /// A simulated path violated an invariant it should satisfy by
    /// construction (e.g. positivity).
    #[error("simulation integrity error in {op}: {detail}")]
    SimulationIntegrity { op: &'static str, detail: String },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn domain(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Domain { op, detail: detail.into() }
    }

    pub fn structural(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Structural { op, detail: detail.into() }
    }
}
