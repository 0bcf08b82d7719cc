//! Distributed primal-dual consensus optimisation with a flexible number of
//! primal steps per dual update (the FlexPD family), stepsize certificates,
//! baselines, and an experiment harness.

pub mod algorithm;
pub mod baselines;
pub mod error;
pub mod experiments;
pub mod graph;
pub mod linalg;
pub mod objective;
pub mod stepsize;

pub use algorithm::{
    dual_step, flexpd_c_step, flexpd_c_step_compact, flexpd_f_step, flexpd_g_step, kkt_residual, lyapunov,
    reference_solution, run, solve, AlgorithmState, KktResidual, Method, PrimalDual, Reference, RunTrace, StepParams,
    StopCriterion, StopRule, TraceRow, Variant,
};
pub use error::{Error, Result};
pub use graph::{build_topology, Graph, Network, Topology};
pub use objective::{Dataset, ObjectiveSet};
pub use stepsize::StepsizeCertificate;
