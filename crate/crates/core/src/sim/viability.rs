//! Membership in C*: points of C from which a nontrivial flow stays in C.

use crate::scalar::{lit, to_f64, Scalar};

use super::config::SolverConfig;
use super::flow::{integrate_flow_with, FlowOptions, FlowStop, JumpEntry};
use super::{HybridDynamics, Side, SimError};

/// Uses the system's analytic test when it has one, the numeric probe otherwise.
pub fn viability_in_c<S: Scalar>(
    sys: &dyn HybridDynamics<S>,
    t: S,
    j: usize,
    x: &[S],
    cfg: &SolverConfig,
) -> Result<bool, SimError> {
    if !sys.in_flow_set(t, j, x, lit(cfg.tol_set), Side::Flow)? {
        return Err(SimError::OutsideFlowSet { t: to_f64(t) });
    }
    match sys.viability_override(t, j, x) {
        Some(v) => Ok(v),
        None => viability_probe(sys, t, j, x, cfg),
    }
}

/// Flows for `h_viab`, `h_viab/2`, `h_viab/4` and requires the state to stay
/// within the band `m_C <= tol_set + κ h` for each horizon.
pub fn viability_probe<S: Scalar>(
    sys: &dyn HybridDynamics<S>,
    t: S,
    j: usize,
    x: &[S],
    cfg: &SolverConfig,
) -> Result<bool, SimError> {
    let probe_cfg = SolverConfig {
        max_step: cfg.max_step.min(cfg.h_viab / 4.0),
        min_step: cfg.min_step.min(cfg.h_viab / 1e6),
        ..cfg.clone()
    };
    for k in 0..3 {
        let h = cfg.h_viab / f64::from(1u32 << k);
        let mut opts = FlowOptions::new(t + lit(h), JumpEntry::Ignore);
        opts.set_slack = lit(cfg.viab_slope * h);
        opts.system_stops = false;
        let r = match integrate_flow_with(sys, x, t, j, &probe_cfg, &opts) {
            Ok(r) => r,
            Err(SimError::OutsideFlowSet { .. }) => return Ok(false),
            Err(e) => return Err(e),
        };
        if r.stop != FlowStop::ReachedHorizon {
            return Ok(false);
        }
    }
    Ok(true)
}
