use alloc::string::String;

/// Failure modes shared by every stage of the pipeline.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("dataset contains a single class; both labels are required")]
    SingleClass,
    #[error("class {label} has {count} rows, at least {required} required")]
    TooFewInClass {
        label: i8,
        count: usize,
        required: usize,
    },
    #[error("{n} variables exceed the exhaustive-search cap of {cap}; use simulated annealing for a reference solution")]
    BruteForceTooLarge { n: usize, cap: usize },
    #[error("{n} qubits exceed the state-vector cap of {cap}; split the register into clusters first")]
    StateTooLarge { n: usize, cap: usize },
    #[error("coincident atoms {0} and {1}")]
    CoincidentAtoms(usize, usize),
    #[error("reference cost is zero; the relative gap is undefined")]
    ZeroReferenceCost,
    #[error("MPS norm underflowed; use a smaller imaginary-time step")]
    NormUnderflow,
    #[error("recall target {target} outside curve span [{low}, {high}]")]
    RecallOutOfRange { target: f64, low: f64, high: f64 },
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
