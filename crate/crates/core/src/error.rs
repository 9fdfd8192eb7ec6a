use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("backend mismatch: {0}")]
    BackendMismatch(String),

    #[error("flow extinct at t = {t} (extinction time {extinction})")]
    FlowExtinct { t: f64, extinction: f64 },

    #[error("time step {dt} exceeds stability cap {cap}")]
    Unstable { dt: f64, cap: f64 },

    #[error("positivity lost at t = {t}, cell {cell} (value {value})")]
    PositivityLost { t: f64, cell: usize, value: f64 },

    #[error("finite-time blow-up reached at t = {t} (max {max} > cap {cap})")]
    BlowUp { t: f64, max: f64, cap: f64 },

    #[error("invalid configuration: {field}: {reason}")]
    Config { field: String, reason: String },

    #[error("sample index {index} out of range ({len} samples)")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },

    #[error("weight function: {0}")]
    WeightFunction(String),

    #[error("solution bounds violate the registry: {0}")]
    BoundsViolated(String),

    #[error("cannot fit {constant}: {reason}")]
    Fit { constant: String, reason: String },

    #[error("{0}")]
    Invalid(String),

    #[error("{stage} stage: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Whether the error comes from the configuration rather than the run.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config { .. } => true,
            Error::Stage { source, .. } => source.is_config(),
            _ => false,
        }
    }

    /// Pipeline stage that raised the error, if recorded.
    pub fn stage(&self) -> Option<&'static str> {
        match self {
            Error::Stage { stage, .. } => Some(stage),
            _ => None,
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
