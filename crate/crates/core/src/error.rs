use crate::dag::OpId;
use crate::store::ObjectId;
use crate::RankId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("object size must be positive")]
    ZeroSize,
    #[error("op {op} writes object {object} more than once")]
    DoubleWrite { object: ObjectId, op: OpId },
    #[error("object {object} passed as both const and mutable argument")]
    AliasedArgs { object: ObjectId },
    #[error("payload size mismatch for {object}:v{index}: expected {expected} bytes, got {actual}")]
    PayloadSize {
        object: ObjectId,
        index: u32,
        expected: usize,
        actual: usize,
    },
    #[error("revision {object}:v{index} completed twice")]
    DoubleComplete { object: ObjectId, index: u32 },
    #[error("element type mismatch for object {object}")]
    ElemType { object: ObjectId },
    #[error("kernel `{0}` declared twice")]
    DuplicateKernel(String),
    #[error("kernel `{kernel}` takes {expected} arguments, got {actual}")]
    Arity {
        kernel: String,
        expected: usize,
        actual: usize,
    },
    #[error("object {object} read before any generator initialized it")]
    UseBeforeInit { object: ObjectId },
    #[error("unknown object {0}")]
    UnknownObject(ObjectId),
    #[error("object {0} used after release")]
    UseAfterRelease(ObjectId),
    #[error("revision {object}:v{index} is not ready")]
    NotReady { object: ObjectId, index: u32 },
    #[error("object {object} has no ready payload on rank {rank}")]
    NotLocal { object: ObjectId, rank: RankId },
    #[error("kernel `{kernel}` failed in op {op}: {message}")]
    KernelFailed {
        op: OpId,
        kernel: String,
        message: String,
    },
    #[error("DAG stalled on rank {rank}: {completed} of {total} local ops completed and nothing is runnable")]
    StalledDag {
        rank: RankId,
        completed: usize,
        total: usize,
    },
    #[error("rank {rank} out of range for {ranks} ranks")]
    BadRank { rank: usize, ranks: usize },
    #[error("scope stack is empty")]
    ScopeUnderflow,
    #[error("reduction over an empty replica list")]
    EmptyReduction,
    #[error("revision {object}:v{index} has no placed generator or owner")]
    UnplacedGenerator { object: ObjectId, index: u32 },
    #[error("DAG diverged between ranks: {0}")]
    DivergedDag(String),
    #[error("transport down: {0}")]
    TransportDown(String),
    #[error("remote rank {rank} aborted: {reason}")]
    RemoteAbort { rank: RankId, reason: String },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
