//! Simulation and robustness analysis of hybrid dynamical systems
//!
//! ```text
//! ẋ  = f(x)   x ∈ C
//! x⁺ = g(x)   x ∈ D
//! ```
//!
//! Sets are sublevel sets `{m <= 0}` of continuous margin functions. The
//! numeric core is generic over [`Scalar`]; `f64` aliases are provided below.

// `!(a < b)` is deliberate wherever NaN must fail a check
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod arc;
pub mod builtins;
pub mod closeness;
pub mod experiment;
pub mod perturbation;
pub mod robustness;
pub mod scalar;
pub mod sim;
pub mod system;

use thiserror::Error;

pub use scalar::Scalar;

pub type HybridArc64 = arc::HybridArc<f64>;
pub type HybridSystem64 = system::HybridSystem<f64>;
pub type PerturbedSystem64 = perturbation::PerturbedSystem<f64>;
pub type PerturbationSignal64 = perturbation::PerturbationSignal<f64>;
pub type ClosenessVerdict64 = closeness::ClosenessVerdict<f64>;

/// Any error raised by the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Arc(#[from] arc::ArcError),
    #[error(transparent)]
    Closeness(#[from] closeness::ClosenessError),
    #[error(transparent)]
    Perturbation(#[from] perturbation::PerturbationError),
    #[error(transparent)]
    Sim(#[from] sim::SimError),
    #[error(transparent)]
    System(#[from] system::SystemError),
    #[error(transparent)]
    Experiment(#[from] experiment::ExperimentError),
    #[error(transparent)]
    Robustness(#[from] robustness::RobustnessError),
}
