//! Actor-critic training with a rank-1 Sherman–Morrison natural gradient,
//! alongside SGD, Adam and conjugate-gradient baselines, on native
//! classic-control tasks.

pub mod advantage;
pub mod envs;
pub mod error;
pub mod fisher;
pub mod harness;
pub mod net;
pub mod numcore;
pub mod optim;
pub mod policy;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
pub use numcore::{ParamVector, Rng};
pub use envs::{Env, EnvKind};
pub use optim::OptimizerKind;
pub use trainer::{train, AgentConfig, BatchMode, RunRecord};
