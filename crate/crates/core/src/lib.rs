//! Implicitly parallel task graphs over versioned objects.
//!
//! A program records kernel calls against [`Handle`]s. Each call reads the
//! current revision of its const arguments and produces a new revision of
//! each mutable one, so the recorded sequence is also a dataflow DAG. On
//! [`Context::sync`] the DAG is executed by a pool of worker threads on each
//! rank, and revisions read on a different rank than the one that produced
//! them are shipped there over broadcast trees.

pub mod buffer;
pub mod context;
pub mod dag;
pub mod dist;
pub mod error;
pub mod inputs;
pub mod linalg;
pub mod mapreduce;
pub mod report;
pub mod runtime;
mod sched;
pub mod store;
pub mod transport;
pub mod workloads;

pub type RankId = usize;

pub use buffer::{Buffer, ElemType, Layout};
pub use context::{Context, Handle};
pub use dag::{ArgMode, Args, Kernel, KernelError, OpId};
pub use dist::{apply_reduction_schedule, NodeScope, Reduction, TransferPlan};
pub use error::{Error, Result};
pub use report::{emit_timing_table, ExecReport, TimingRow};
pub use runtime::{RunOutput, Runtime};
pub use sched::EpochStats;
pub use store::{Init, ObjectId, RevisionRef, RevisionState};
