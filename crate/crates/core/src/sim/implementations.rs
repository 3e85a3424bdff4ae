//! Deterministic implementations of a hybrid system: jumping-first
//! `H^D = (C \ D, f, D, g)` and flowing-first `H^C = (C, f, D \ C*, g)`.

use std::sync::Arc;

use crate::scalar::{lit, Scalar};
use crate::system::{Exclusion, HybridSystem, MarginFunction, StatePredicate};

use super::config::SolverConfig;
use super::viability::viability_probe;

/// Flow only where `m_D > tol_set`; the flow-set margin becomes
/// `max(m_C, -m_D)` so that it stays continuous.
pub fn derive_jumping_first<S: Scalar>(h: &HybridSystem<S>) -> HybridSystem<S> {
    let mut out = h.clone();
    out.name = format!("{}^D", h.name);
    out.flow_set.margin =
        MarginFunction::max_of(vec![h.flow_set.margin.clone(), h.jump_set.margin.negate()]);
    out.flow_set
        .exclusions
        .push(Exclusion::Sublevel(h.jump_set.margin.clone()));
    out
}

pub fn derive_flowing_first<S: Scalar>(h: &HybridSystem<S>) -> HybridSystem<S> {
    derive_flowing_first_with(h, &SolverConfig::default())
}

/// Jumps are removed wherever a viable flow exists. Without an analytic C*
/// test the numeric probe is captured with `cfg`.
pub fn derive_flowing_first_with<S: Scalar>(
    h: &HybridSystem<S>,
    cfg: &SolverConfig,
) -> HybridSystem<S> {
    let mut out = h.clone();
    out.name = format!("{}^C", h.name);
    let tol: S = lit(cfg.tol_set);
    let base = h.clone();
    let (test, description): (StatePredicate<S>, &str) = match &h.viability_override {
        Some(ov) => {
            let ov = ov.clone();
            (
                Arc::new(move |x: &[S]| base.in_c(x, tol) && ov(x)),
                "C* (analytic)",
            )
        }
        None => {
            let cfg = cfg.clone();
            (
                Arc::new(move |x: &[S]| {
                    base.in_c(x, tol)
                        && viability_probe(&base, S::zero(), 0, x, &cfg).unwrap_or(false)
                }),
                "C* (numeric probe)",
            )
        }
    };
    out.jump_set.exclusions.push(Exclusion::Predicate {
        test,
        description: description.to_string(),
    });
    out
}
