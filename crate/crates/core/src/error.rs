use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in component {index}")]
    NonFinite { index: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Integration produced a non-finite state. Carries the last finite state.
    #[error("integration blew up at t = {time}")]
    Blowup { time: f64, last_state: Vec<f64> },

    #[error("controller returned non-finite control {value} at t = {time}")]
    BadControl { time: f64, value: f64 },

    #[error("no event before timeout {timeout}")]
    Timeout { timeout: f64 },

    #[error("model `{0}` has no closed-form fixed points")]
    NoClosedForm(String),

    #[error("zero spread in dimension {dim}; cannot normalize")]
    ZeroSpread { dim: usize },

    #[error("no periodic orbit detected: {0}")]
    NoPeriodicity(String),

    #[error("state is {distance} from the cycle (bound {bound})")]
    OffCycle { distance: f64, bound: f64 },

    #[error("perturbed trajectory left the basin at phase {phase}")]
    LeftBasin { phase: f64 },

    #[error("sampler exhausted retries: {0}")]
    SamplerExhausted(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
