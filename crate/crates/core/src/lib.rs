//! Sequential Monte Carlo samplers built from user supplied initialization,
//! move, MCMC, monitor and path sampling operations.

pub mod error;
pub mod estimate;
pub mod exec;
pub mod particle;
pub mod resample;
pub mod rng;
pub mod sampler;
pub mod state;
pub mod weights;

pub use error::{Result, SmcError};
pub use estimate::{MonitorRecord, NormalizingConstant, PathRecord};
pub use exec::{
    apply_init, apply_monitor_eval, apply_move, apply_path_eval, make_monitor, make_move, Backend,
    InitKernel, KernelError, KernelInit, KernelMonitor, KernelMove, KernelPath, KernelResult,
    MonitorAdapter, MonitorKernel, MoveAdapter, MoveKernel, PathKernel, WorkerPool,
};
pub use particle::{ConstSingleParticle, Particle, SingleParticle};
pub use resample::ResampleScheme;
pub use rng::{RngSet, Stream};
pub use sampler::{InitOp, IterationRecord, MonitorEval, MoveOp, PathEval, Sampler};
pub use state::{MatrixOrder, SmpValue, State, StateMatrix, Value};
pub use weights::WeightSet;
