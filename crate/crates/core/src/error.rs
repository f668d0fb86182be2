use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("root cell has no parent")]
    RootHasNoParent,
    #[error("lineage word deeper than {max} generations")]
    WordTooDeep { max: u32 },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("non-finite atom at position {0:?}")]
    NonFiniteAtom(Vec<f64>),
    #[error("non-finite query point {0:?}")]
    NonFiniteQuery(Vec<f64>),
    #[error("non-finite state: {0}")]
    NonFiniteState(String),
    #[error("population explosion: {live} live cells exceeds cap {cap}")]
    PopulationExplosion { live: usize, cap: usize },
    #[error("no such line {line} (population has {n0} founders)")]
    NoSuchLine { line: u32, n0: u32 },
    #[error("empty ensemble")]
    EmptyEnsemble,
    #[error("Picard iteration stalled after {iters} iterations, last gap {gap:e}")]
    PicardStalled { iters: usize, gap: f64 },
    #[error("advection CFL {cfl:.3} exceeds 1; need dt <= {required_dt:e}")]
    CflViolation { cfl: f64, required_dt: f64 },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("invalid config: {}", .0.join("; "))]
    ConfigInvalid(Vec<String>),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}
