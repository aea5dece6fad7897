use std::io;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid schematic: {0}")]
    InvalidSchematic(String),
    #[error("no scene inside the occupancy band after {0} attempts")]
    RejectionLimitExceeded(u64),
    #[error("could not place the body in cell {0} without overlap")]
    PlacementOverlap(usize),
    #[error("body {body} reached {speed} m/s; contact gains are unstable")]
    NumericalDivergence { body: usize, speed: f64 },
    #[error("sample timestamps went backwards ({prev} s then {next} s)")]
    NonMonotonicTime { prev: f64, next: f64 },
    #[error("expert needed more than {attempts} attempts for {wanted} demonstrations")]
    ExpertInsufficiency { wanted: usize, attempts: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("training loss became non-finite at epoch {epoch}, step {step}: {detail}")]
    NaNLoss {
        epoch: usize,
        step: usize,
        detail: String,
    },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("corrupt file {path}: {reason}")]
    CorruptFile { path: String, reason: String },
    #[error("missing weights for variant {0}")]
    MissingWeights(String),
    #[error("degenerate proportion: pooled rate is {0}")]
    DegenerateProportion(f64),
    #[error("port {0} is already in use")]
    PortInUse(u16),
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}
