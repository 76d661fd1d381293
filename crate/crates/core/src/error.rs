use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("vector is not unit length (norm {norm})")]
    NotUnit { norm: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    /// The complement projection of `u` is too small for the rank-one gain
    /// statement to apply.
    #[error("projection onto the unexplored subspace is too small: {proj_sq} < {epsilon}")]
    SmallComplement { proj_sq: f64, epsilon: f64 },

    #[error("invalid prior: {0}")]
    InvalidPrior(String),

    #[error("too few support points for estimation: {got} < {min}")]
    TooFewPoints { got: usize, min: usize },

    /// Every particle likelihood underflowed.
    #[error("degenerate posterior: all particle likelihoods vanished ({context})")]
    DegeneratePosterior { context: String },

    #[error("unknown tilt function id {0}")]
    UnknownTilt(usize),

    /// No box-constrained tilt achieves a zero mean. `direction` is the
    /// direction of the smallest moment the LP could reach.
    #[error("tilt infeasible: residual {residual:e}, separating direction {direction:?}")]
    TiltInfeasible { residual: f64, direction: Vec<f64> },

    #[error("empty tilt function")]
    EmptyTilt,

    #[error("missing constant `{0}` in theoretical mode; supply it as an override")]
    MissingConstant(&'static str),

    #[error("invalid constant `{name}` = {value}: {reason}")]
    InvalidConstant {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("growth length {needed} exceeds the logged block length {kappa}")]
    LogExhausted { needed: usize, kappa: usize },

    #[error("growth loop made no exit after {calls} calls (perp norm {perp_norm:e})")]
    GrowthStalled { calls: usize, perp_norm: f64 },

    #[error("step budget of {max_steps} exhausted")]
    BudgetExceeded { max_steps: u64 },

    #[error("{phase}: {source}")]
    Phase {
        phase: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),

    #[error("trace: {0}")]
    Trace(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn in_phase(self, phase: &'static str) -> Error {
        match self {
            e @ Error::Phase { .. } => e,
            e => Error::Phase {
                phase,
                source: Box::new(e),
            },
        }
    }

    /// Strips phase context.
    pub fn root(&self) -> &Error {
        match self {
            Error::Phase { source, .. } => source.root(),
            e => e,
        }
    }
}
