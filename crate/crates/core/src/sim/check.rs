//! Residual check of the flow and jump conditions of a hybrid arc.

use serde::Serialize;

use crate::arc::HybridArc;
use crate::scalar::{lit, to_f64, vec, Scalar};

use super::config::SolverConfig;
use super::{HybridDynamics, Side, SimError};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolutionReport {
    /// Worst `|φ̇ - f(φ)|` over breakpoints (finite differences on the dense output).
    pub flow_residual: f64,
    pub flow_residual_at: Option<(f64, usize)>,
    /// Worst jump residual `|φ(t, j+1) - g(φ(t, j))|`.
    pub jump_residual: f64,
    pub jump_residual_at: Option<(f64, usize)>,
    /// Breakpoints (other than interval ends) outside the flow set.
    pub flow_set_violations: Vec<(f64, usize, f64)>,
    /// Jumps taken from outside the jump set.
    pub jump_set_violations: Vec<(f64, usize, f64)>,
    pub res_tol: f64,
}

impl SolutionReport {
    pub fn passed(&self) -> bool {
        self.flow_residual <= self.res_tol
            && self.jump_residual <= self.res_tol
            && self.flow_set_violations.is_empty()
            && self.jump_set_violations.is_empty()
    }
}

pub fn is_solution<S: Scalar>(
    arc: &HybridArc<S>,
    sys: &dyn HybridDynamics<S>,
    cfg: &SolverConfig,
) -> Result<SolutionReport, SimError> {
    if arc.state_dim() != sys.state_dim() {
        return Err(SimError::Dimension {
            expected: sys.state_dim(),
            found: arc.state_dim(),
        });
    }
    let tol: S = lit(cfg.tol_set);
    let mut rep = SolutionReport {
        flow_residual: 0.0,
        flow_residual_at: None,
        jump_residual: 0.0,
        jump_residual_at: None,
        flow_set_violations: Vec::new(),
        jump_set_violations: Vec::new(),
        res_tol: cfg.res_tol,
    };

    for (j, seg) in arc.segments().iter().enumerate() {
        let lo = seg.times[0];
        let hi = *seg.times.last().unwrap();
        if hi > lo {
            let nb = seg.times.len();
            for k in 0..nb {
                let t = seg.times[k];
                let (deriv, x) = if seg.order() == 1 {
                    // piecewise-linear record: secant of the following step at its midpoint
                    if k + 1 == nb || seg.times[k + 1] == t {
                        continue;
                    }
                    let dt = seg.times[k + 1] - t;
                    let d =
                        vec::scale(&vec::sub(&seg.states[k + 1], &seg.states[k]), S::one() / dt);
                    let tm = t + dt * lit(0.5);
                    (d, seg.eval(tm).unwrap())
                } else {
                    (fd_derivative(seg, t, lo, hi), seg.states[k].clone())
                };
                let tq = if seg.order() == 1 {
                    t + (seg.times[k + 1] - t) * lit(0.5)
                } else {
                    t
                };
                let fx = sys.flow(tq, j, &x)?;
                let r = to_f64(vec::dist(&deriv, &fx));
                if !(r <= rep.flow_residual) {
                    rep.flow_residual = if r.is_nan() { f64::INFINITY } else { r };
                    rep.flow_residual_at = Some((to_f64(tq), j));
                }
            }
            // flow set on [t_j, t_{j+1}): all breakpoints but the last
            for k in 0..nb - 1 {
                let (t, x) = (seg.times[k], &seg.states[k]);
                if !sys.in_flow_set(t, j, x, tol, Side::Flow)? {
                    let m = sys.flow_margin(t, j, x, Side::Flow)?;
                    rep.flow_set_violations.push((to_f64(t), j, to_f64(m)));
                }
            }
        }
        if j + 1 < arc.segments().len() {
            let next = &arc.segments()[j + 1];
            let t = next.times[0];
            let pre = seg.states.last().unwrap();
            let post = &next.states[0];
            if !sys.in_jump_set(t, j, pre, tol, Side::Node)? {
                let m = sys.jump_margin(t, j, pre, Side::Node)?;
                rep.jump_set_violations.push((to_f64(t), j, to_f64(m)));
            }
            let g = sys.jump(t, j, pre)?;
            let r = to_f64(vec::dist(post, &g));
            if !(r <= rep.jump_residual) {
                rep.jump_residual = if r.is_nan() { f64::INFINITY } else { r };
                rep.jump_residual_at = Some((to_f64(t), j));
            }
        }
    }
    Ok(rep)
}

/// Finite-difference derivative of the dense output at `t`: central in the
/// interior, one-sided second order at the interval ends.
fn fd_derivative<S: Scalar>(seg: &crate::arc::Segment<S>, t: S, lo: S, hi: S) -> Vec<S> {
    let len = hi - lo;
    let h = lit::<S>(1e-6).min(len * lit(0.25));
    let ev = |s: S| seg.eval(s.max(lo).min(hi)).unwrap();
    let two: S = lit(2.0);
    if t - h >= lo && t + h <= hi {
        let (a, b) = (ev(t - h), ev(t + h));
        return a
            .iter()
            .zip(&b)
            .map(|(&p, &q)| (q - p) / (two * h))
            .collect();
    }
    let three: S = lit(3.0);
    let four: S = lit(4.0);
    let (sgn, h) = if t + two * h <= hi {
        (S::one(), h)
    } else {
        (-S::one(), h)
    };
    let x0 = ev(t);
    let x1 = ev(t + sgn * h);
    let x2 = ev(t + sgn * two * h);
    (0..x0.len())
        .map(|i| sgn * (-three * x0[i] + four * x1[i] - x2[i]) / (two * h))
        .collect()
}
