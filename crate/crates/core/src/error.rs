use thiserror::Error;

/// Errors raised by the fusion estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid cumulative hazard: {0}")]
    InvalidHazard(String),

    #[error("empty risk set")]
    EmptyRiskSet,

    #[error("tied cross-cause event times at t = {0}")]
    TiedCrossCause(f64),

    #[error("invalid record {id}: {reason}")]
    InvalidRecord { id: String, reason: String },

    #[error("invalid cohort: {0}")]
    InvalidCohort(String),

    #[error("degenerate labels: all observations share one class")]
    DegenerateLabels,

    #[error("separation: coefficient norm {norm:.3e} exceeds limit before convergence")]
    Separation { norm: f64 },

    #[error("no events")]
    NoEvents,

    #[error("degenerate design: column {column} has zero variance")]
    DegenerateDesign { column: usize },

    #[error("singular information matrix")]
    Singular,

    #[error("fit failed in stratum `{stratum}`: {source}")]
    Stratum {
        stratum: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("missing nuisance component `{0}`")]
    MissingNuisance(&'static str),

    #[error("positivity violation at t = {time} for record {record}")]
    Positivity { record: String, time: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn in_stratum(self, stratum: &'static str) -> Self {
        Error::Stratum {
            stratum,
            source: Box::new(self),
        }
    }

    /// True for errors caused by the numerics rather than by the input data.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Separation { .. } | Error::Singular | Error::Positivity { .. } => true,
            Error::Stratum { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
