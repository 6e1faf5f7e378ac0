use thiserror::Error;

/// Errors surfaced by the simulator and control plane.
#[derive(Debug, Error)]
pub enum Error {
    #[error("event at t={event_t} is in the past (clock at t={clock_t})")]
    PastEvent { event_t: f64, clock_t: f64 },

    #[error("unknown node `{0}`")]
    UnknownNode(String),

    #[error("bad parameter: {0}")]
    BadParameter(String),

    #[error("gate target out of range or duplicated: {0}")]
    BadTarget(String),

    #[error("no free memory mode at node `{node}`")]
    MemoryFull { node: String },

    #[error("no free memory mode reserved for link `{0}`")]
    NoFreeMode(String),

    #[error("pair endpoints do not meet at repeater `{0}`")]
    WrongEndpoints(String),

    #[error("no path between `{src}` and `{dst}`")]
    NoPath { src: String, dst: String },

    #[error("no candidate plan has nonzero utility for request `{0}`")]
    AllZeroUtility(String),

    #[error(
        "classical feedback ({rtt_s} s) exceeds entanglement-preserving lifetime ({t_non_eb_s} s) on link `{link}`"
    )]
    LatencyCoherenceViolation {
        link: String,
        rtt_s: f64,
        t_non_eb_s: f64,
    },

    #[error("instance too large for brute-force enumeration: {0}")]
    InstanceTooLarge(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("validation error at `{field}`: {message}")]
    Validation { field: String, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
