//! Flow integration, event location, jumps and solution enumeration.

mod check;
mod config;
mod engine;
mod flow;
mod implementations;
mod rk;
mod viability;

pub use check::{is_solution, SolutionReport};
pub use config::{ConfigError, SolverConfig};
pub use engine::{simulate, ArcEnd, SimArc, SimOutcome, Strategy};
pub use flow::{integrate_flow, integrate_flow_with, FlowOptions, FlowResult, FlowStop, JumpEntry};
pub use implementations::{derive_flowing_first, derive_flowing_first_with, derive_jumping_first};
pub use viability::{viability_in_c, viability_probe};

use thiserror::Error;

use crate::scalar::Scalar;

/// Where a set or map evaluation happens. Impulsive perturbations are only
/// felt at hybrid-time nodes (decision points), never inside the flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Node,
    Flow,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("initial state is outside C ∪ D (m_C = {m_c}, m_D = {m_d})")]
    OutsideDomain { m_c: f64, m_d: f64 },
    #[error("flow start at t = {t} is outside the flow set")]
    OutsideFlowSet { t: f64 },
    #[error("step size underflow at t = {t} (h = {h}); stiff or grazing dynamics")]
    StepUnderflow { t: f64, h: f64 },
    #[error("non-finite state or derivative at t = {t}")]
    NonFinite { t: f64 },
    #[error("perturbation channel n{channel} exceeds the unit bound at (t, j) = ({t}, {j}): |n| = {norm}")]
    SignalBound {
        channel: usize,
        t: f64,
        j: usize,
        norm: f64,
    },
    #[error("scripted jump at (t, j) = ({t}, {j}) is not enabled")]
    ScriptedJumpNotEnabled { t: f64, j: usize },
    #[error("script cannot be followed at (t, j) = ({t}, {j}): flow is not possible")]
    ScriptedFlowImpossible { t: f64, j: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// The data the simulator needs from a (possibly perturbed) hybrid system.
///
/// Set memberships are decided on the continuous margins with the band
/// `margin <= tol`; `in_*_set` additionally applies any exclusion attached to
/// the set (derived implementations carve pieces out of C or D).
pub trait HybridDynamics<S: Scalar>: Send + Sync {
    fn name(&self) -> &str;
    fn state_dim(&self) -> usize;

    fn flow(&self, t: S, j: usize, x: &[S]) -> Result<Vec<S>, SimError>;
    fn jump(&self, t: S, j: usize, x: &[S]) -> Result<Vec<S>, SimError>;

    fn flow_margin(&self, t: S, j: usize, x: &[S], side: Side) -> Result<S, SimError>;
    fn jump_margin(&self, t: S, j: usize, x: &[S], side: Side) -> Result<S, SimError>;

    fn in_flow_set(&self, t: S, j: usize, x: &[S], tol: S, side: Side) -> Result<bool, SimError>;
    fn in_jump_set(&self, t: S, j: usize, x: &[S], tol: S, side: Side) -> Result<bool, SimError>;

    /// Analytic C* membership when known; `None` falls back to the numeric probe.
    fn viability_override(&self, _t: S, _j: usize, _x: &[S]) -> Option<bool> {
        None
    }

    /// Hybrid times the integrator must land on exactly (impulse instants).
    fn mandatory_stops(&self) -> Vec<S> {
        Vec::new()
    }
}
