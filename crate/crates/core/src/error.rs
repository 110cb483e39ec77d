use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("point is not on the manifold: {0}")]
    ManifoldViolation(String),

    #[error("point lies within {radius:e} of the cut locus of the base point")]
    CutLocus { radius: f64 },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("{message} (hint: {hint})")]
    Structure { message: String, hint: String },

    #[error("noise distribution of tuple {tuple} has zero total mass")]
    DegenerateNoise { tuple: String },

    #[error("invalid noise distribution: {0}")]
    InvalidNoise(String),

    #[error("primitives without any labeled sample: {}", .primitives.join(", "))]
    Coverage { primitives: Vec<String> },

    #[error("unknown primitive {name:?} in factor {factor:?}{}", line_suffix(*.line))]
    UnknownPrimitive {
        factor: String,
        name: String,
        line: Option<usize>,
    },

    #[error("no anchor embedding for tuple {tuple}")]
    MissingAnchor { tuple: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("temperature tuning failed: {0}")]
    Tuning(String),

    #[error("gradient-descent oracle diverged at iteration {iteration}")]
    OracleDivergence { iteration: usize },

    #[error("division by zero: {0}")]
    DivisionByZero(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("truncated file: expected {expected} bytes, found {actual}")]
    Truncation { expected: usize, actual: usize },

    #[error("invalid data in row {row}: {message}")]
    Data { row: usize, message: String },

    #[error("label rows ({labels}) do not match embedding rows ({rows})")]
    Alignment { labels: usize, rows: usize },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

fn line_suffix(line: Option<usize>) -> String {
    match line {
        Some(l) => format!(" at line {l}"),
        None => String::new(),
    }
}

impl Error {
    /// Stable machine-readable code used by the CLI error object.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension_error",
            Error::ManifoldViolation(_) => "manifold_violation",
            Error::CutLocus { .. } => "cut_locus_error",
            Error::DegenerateInput(_) => "degenerate_input",
            Error::EmptyInput(_) => "empty_input",
            Error::InvalidWeights(_) => "invalid_weights",
            Error::Structure { .. } => "structure_error",
            Error::DegenerateNoise { .. } => "degenerate_noise",
            Error::InvalidNoise(_) => "invalid_noise",
            Error::Coverage { .. } => "coverage_error",
            Error::UnknownPrimitive { .. } => "unknown_primitive",
            Error::MissingAnchor { .. } => "missing_anchor",
            Error::Config(_) => "config_error",
            Error::Tuning(_) => "tuning_error",
            Error::OracleDivergence { .. } => "oracle_divergence",
            Error::DivisionByZero(_) => "division_by_zero",
            Error::Format(_) => "format_error",
            Error::Truncation { .. } => "truncation_error",
            Error::Data { .. } => "data_error",
            Error::Alignment { .. } => "alignment_error",
            Error::Io(_) => "io_error",
            Error::Json(_) => "json_error",
        }
    }
}
