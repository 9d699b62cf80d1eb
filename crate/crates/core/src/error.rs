use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("topology error: {0}")]
    Topology(String),

    #[error("graph is not connected: no path from agent {from} to agent {to}")]
    Disconnected { from: usize, to: usize },

    #[error("combination matrix is invalid: {0}")]
    InvalidMatrix(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid action {action} for agent {agent} (action count {action_count})")]
    InvalidAction {
        agent: usize,
        action: usize,
        action_count: usize,
    },

    #[error("degenerate belief: {0}")]
    DegenerateBelief(String),

    #[error("behavioral probability {prob} is below the floor {floor} (policy must be time-invariant and nonzero)")]
    BehavioralFloor { prob: f64, floor: f64 },

    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("numerical divergence in {quantity} at step {step}")]
    Divergence { quantity: &'static str, step: usize },

    #[error("bound precondition violated: {0}")]
    Bound(String),

    #[error("degenerate policy gap: the Θ vector is zero")]
    DegeneratePolicyGap,

    #[error("pairing error: {0}")]
    Pairing(String),

    #[error("config validation failed:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
