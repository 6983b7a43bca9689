use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("gluing rule {index} is invalid: {reason}")]
    InvalidGluing { index: usize, reason: String },

    #[error("invalid self-similar structure: {0}")]
    InvalidStructure(String),

    #[error("level-1 graph is disconnected ({components} components)")]
    Disconnected { components: usize },

    #[error("level {requested} exceeds the built depth {built}")]
    LevelNotBuilt { requested: usize, built: usize },

    #[error("invalid harmonic structure: {0}")]
    InvalidHarmonicStructure(String),

    #[error("compatibility condition fails: max deviation {deviation:.3e} exceeds {tolerance:.1e}")]
    Incompatible { deviation: f64, tolerance: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("level mismatch: expected level {expected}, got {got}")]
    LevelMismatch { expected: usize, got: usize },

    #[error("no admissible level n0 <= {max_level}; level {required} would be required")]
    NoAdmissibleLevel { max_level: usize, required: usize },

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("coefficient out of bounds: {0}")]
    CoefficientBounds(String),

    #[error("infeasible coefficients: {0}")]
    Infeasible(String),

    #[error("linear solver failed: {0}")]
    SolverFailure(String),

    #[error("problem too large for {operation}: {size} unknowns (limit {limit})")]
    TooLarge { operation: &'static str, size: usize, limit: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
