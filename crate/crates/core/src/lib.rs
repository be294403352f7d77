//! Bi-objective (execution time, dynamic energy) tuning of threadgroup-parallel
//! data-parallel kernels.
//!
//! A kernel is run under every `(threadgroups, threads per group)` pair that
//! fits on the machine, each objective is measured until its sample mean is
//! statistically reliable, and the globally Pareto-optimal configurations are
//! reported. A nonnegative linear model relating dynamic energy to dTLB
//! page-walk counters is also provided.

pub mod config;
pub mod driver;
pub mod energymodel;
pub mod error;
pub mod fft;
pub mod gemm;
pub mod measure;
pub mod pareto;
pub mod stats;

pub use config::{
    enumerate_configurations, Configuration, KernelId, ObjectiveSample, Precision, Workload,
};
pub use error::{Error, Result};
pub use pareto::{front_build, front_update, FrontEntry, ParetoFront};
