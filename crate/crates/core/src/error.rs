use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("non-stationary AR coefficient {value}: the stationary initial law needs |{name}| < 1")]
    NonStationary { name: &'static str, value: f64 },
    #[error("invalid parameter {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("expected {expected} parameters, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("time series must be non-empty")]
    EmptySeries,
    #[error("time series entry {index} is not finite ({value})")]
    NonFinite { index: usize, value: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SmcError {
    #[error("weight degeneracy at step {step}: no particle has finite log-weight")]
    Degenerate { step: usize },
    #[error("weight degeneracy: no finite log-weight")]
    DegenerateWeights,
    #[error("non-finite log-weight {value} at index {index}")]
    NonFiniteLogWeight { index: usize, value: f64 },
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("filter needs at least one particle")]
    NoParticles,
    #[error("ESS threshold must lie in [0, 1], got {0}")]
    EssThreshold(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl SmcError {
    pub fn is_degeneracy(&self) -> bool {
        matches!(self, SmcError::Degenerate { .. } | SmcError::DegenerateWeights)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChainError {
    #[error("initialisation failed: {0}")]
    Init(String),
    #[error("proposal domain error: parameter {index} must be positive under a log transform, got {value}")]
    ProposalDomain { index: usize, value: f64 },
    #[error("invalid proposal: {0}")]
    Proposal(String),
    #[error("dimension mismatch: model has {model} parameters, {what} has {got}")]
    Dimension {
        model: usize,
        what: &'static str,
        got: usize,
    },
    #[error("thinning stride must be at least 1")]
    Thin,
    #[error(transparent)]
    Filter(#[from] SmcError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvidenceError {
    #[error("non-finite log normalising term {value} at step {step}")]
    Degenerate { step: usize, value: f64 },
    #[error("conditional density needs at least 2 states, got {0}")]
    InsufficientData(usize),
    #[error("prior on phi must be Gaussian (optionally truncated) for the conjugate conditional")]
    NonGaussianPrior,
    #[error("no retained trajectories after burn-in")]
    EmptyRetained,
    #[error("{failed} of {total} likelihood replicates failed: {messages:?}")]
    ReplicatesFailed {
        failed: usize,
        total: usize,
        messages: Vec<String>,
    },
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Filter(#[from] SmcError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiagError {
    #[error("series has zero variance")]
    DegenerateSeries,
    #[error("max_lag {max_lag} must satisfy 1 <= max_lag < length {len}")]
    Lag { max_lag: usize, len: usize },
    #[error("burn-in fraction {0} outside [0, 1)")]
    BurnIn(f64),
    #[error("no samples left after burn-in")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { key: String, line: usize },
    #[error("line {line}: duplicate key `{key}` (first set on line {first})")]
    Duplicate { key: String, line: usize, first: usize },
    #[error("line {line}: `{key}` expects {expected}, got {value:?}")]
    Type {
        key: String,
        line: usize,
        value: String,
        expected: &'static str,
    },
    #[error("{}`{key}`: {reason}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
    Constraint {
        key: String,
        line: Option<usize>,
        reason: String,
    },
    #[error("missing required key `{0}`")]
    Missing(String),
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}, line {line}: cannot parse {text:?} as a number")]
    Parse { path: String, line: usize, text: String },
    #[error("{path}, line {line}: non-finite value {text:?}")]
    NonFinite { path: String, line: usize, text: String },
    #[error("{0}: no observations")]
    Empty(String),
    #[error("{path}: {reason}")]
    Format { path: String, reason: String },
}
