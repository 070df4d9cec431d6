use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("network must have at least two buses, got {0}")]
    TooFewBuses(usize),

    #[error("a radial network with {buses} buses needs exactly {expected} lines, got {got}")]
    LineCount {
        buses: usize,
        expected: usize,
        got: usize,
    },

    #[error("line {line} ({from} -> {to}) references a bus outside 0..{buses}")]
    BusOutOfRange {
        line: usize,
        from: usize,
        to: usize,
        buses: usize,
    },

    #[error("line {line} ({from} -> {to}) closes a cycle; topology is not a tree")]
    Cycle { line: usize, from: usize, to: usize },

    #[error("line {line} has invalid impedance: {reason}")]
    Impedance { line: usize, reason: String },

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("backward/forward sweep did not converge after {iterations} iterations (last change {last_change:e})")]
    SweepDiverged { iterations: usize, last_change: f64 },

    #[error("box QP solver stopped after {iterations} iterations with KKT residual {residual:e}")]
    QpIterationLimit { iterations: usize, residual: f64 },

    #[error("point lies outside the box at coordinate {index} (value {value}, bounds [{lower}, {upper}])")]
    OutsideBox {
        index: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("tracking bound undefined: rho = {rho} is not in (0, 1) for epsilon = {epsilon}, beta' = {beta_prime}")]
    RhoOutOfRange {
        rho: f64,
        epsilon: f64,
        beta_prime: f64,
    },

    #[error("bus {bus} is idle for the {delay} steps starting at step {start}, exceeding the delay bound")]
    DelayViolation {
        bus: usize,
        start: usize,
        delay: usize,
    },

    #[error("unstable step size {epsilon}: iteration spectral radius {radius} >= 1 (bound 2/M = {bound})")]
    UnstableStepSize {
        epsilon: f64,
        radius: f64,
        bound: f64,
    },

    #[error("scenario error at {pointer}: {message}")]
    Scenario { pointer: String, message: String },

    #[error("episode with seed {seed} failed at step {step}: {source}")]
    Episode {
        seed: u64,
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn scenario(pointer: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Scenario {
            pointer: pointer.into(),
            message: message.into(),
        }
    }
}

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension {
            what,
            expected,
            got,
        })
    }
}
