use thiserror::Error;

/// Errors raised by model construction, linear algebra and persistence.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown benchmark case `{0}`")]
    UnknownCase(String),

    #[error("CFL check failed for {case}: {number} = {value:.4} exceeds the stability limit {limit:.4}")]
    Cfl {
        case: String,
        number: &'static str,
        value: f64,
        limit: f64,
    },

    #[error("parameter {value:?} lies outside the parameter box {lower:?}..{upper:?}")]
    ParameterOutOfRange {
        value: Vec<f64>,
        lower: Vec<f64>,
        upper: Vec<f64>,
    },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value produced at time step {step}")]
    NonFinite { step: usize },

    #[error("stride {stride} does not divide the number of time steps {n_steps}")]
    Stride { stride: usize, n_steps: usize },

    #[error("requested rank {requested} exceeds the available rank {available}")]
    Rank { requested: usize, available: usize },

    #[error("decomposition failed: {0}")]
    Decomposition(String),

    #[error("trajectory is unstable (first bad step {first_bad_step:?})")]
    Unstable { first_bad_step: Option<usize> },

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("quadratic map was fitted against a different basis ({0})")]
    Provenance(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("malformed file {path}: {reason}")]
    Format { path: String, reason: String },

    #[error("checksum mismatch in {path}: stored {stored:016x}, computed {computed:016x}")]
    Checksum {
        path: String,
        stored: u64,
        computed: u64,
    },

    #[error("manifest is missing required field `{0}`")]
    MissingField(String),

    #[error("unsupported format version `{found}` (expected `{expected}`)")]
    Version { expected: String, found: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
