//! Lock-free asynchronous SGD on sparse finite-sum objectives: objectives and
//! problem constants, sparsity filters, step-size schedules and bounds, a
//! deterministic delay simulator, a multi-threaded lock-free engine, data
//! loading, and verification utilities.

pub mod dataset;
pub mod error;
pub mod experiment;
pub mod filters;
pub mod io;
pub mod libsvm;
pub mod objective;
pub mod parallel;
pub mod schedule;
pub mod sim;
pub mod synthetic;
pub mod trace;
pub mod vector;
pub mod verify;

pub use dataset::{Dataset, Sample};
pub use error::{Error, Result};
pub use filters::{blocks_for_fraction, FilterPartition, SparsityStats};
pub use objective::{Objective, ObjectiveKind, ProblemConstants, RegularizationMode};
pub use schedule::{make_schedule, ScheduleKind, ScheduleOptions, StepSchedule};
pub use sim::{run_sequential, DelayModel, DelayRule, MaskPolicy, SequentialConfig, SimState};
pub use parallel::{run_parallel, CounterMode, ParallelConfig, ParallelOutput};
pub use trace::{Checkpoint, CheckpointPlan, Trace, TraceSeed};
pub use vector::{DenseVector, SparseVector};
