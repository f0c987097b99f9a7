//! Distributed training of L2-regularized linear classifiers by batch descent
//! whose directions come from parallel variance-reduced SGD on locally tilted
//! objectives, plus the batch baselines it is compared against. Nodes are
//! simulated in process.

pub mod approx;
pub mod cluster;
pub mod data;
pub mod direction;
pub mod driver;
pub mod error;
pub mod exact;
pub mod fixtures;
pub mod loss;
pub mod metrics;
pub mod svrg;

pub use approx::TiltedApprox;
pub use cluster::{Cluster, CommLedger, Phase};
pub use data::{partition, read_libsvm, Dataset, PartitionPlan, PartitionStrategy};
pub use direction::{LineSearchConfig, SafeguardConfig};
pub use driver::{
    run, run_fs, run_hybrid, run_sqm, write_trace, IterationRecord, Method, NoObserver, Observer,
    RunConfig, RunResult, StepAudit, StopReason,
};
pub use error::{Error, Result};
pub use loss::{LossKind, Objective};
pub use metrics::{auprc, relative_gap, solve_reference, ReferenceSolution};
pub use svrg::{Sampling, StepSize, SvrgConfig};
