//! Alternating flows and jumps under an implementation strategy.

use serde::{Deserialize, Serialize};

use crate::arc::{ArcBuilder, HybridArc};
use crate::scalar::{lit, to_f64, vec, Scalar};

use super::config::SolverConfig;
use super::flow::{integrate_flow_with, FlowOptions, FlowStop, JumpEntry};
use super::viability::viability_probe;
use super::{HybridDynamics, Side, SimError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Jump whenever the state is in D.
    JumpingFirst,
    /// Flow whenever a viable flow exists.
    FlowingFirst,
    /// Depth-first enumeration of both options at every branching point.
    EnumerateAll,
    /// Flow durations (from the start of each interval) before each jump.
    Scripted(Vec<f64>),
}

impl Strategy {
    pub fn id(&self) -> &'static str {
        match self {
            Strategy::JumpingFirst => "jumping-first",
            Strategy::FlowingFirst => "flowing-first",
            Strategy::EnumerateAll => "enumerate-all",
            Strategy::Scripted(_) => "scripted",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArcEnd {
    HorizonT,
    HorizonJ,
    /// No jump enabled and no viable flow: the arc is maximal.
    DeadEnd,
}

#[derive(Debug, Clone)]
pub struct SimArc<S> {
    pub arc: HybridArc<S>,
    pub end: ArcEnd,
}

#[derive(Debug, Clone)]
pub struct SimOutcome<S> {
    pub arcs: Vec<SimArc<S>>,
    /// Branch points where only the flow option was explored.
    pub budget_exhausted: bool,
    pub branch_points: usize,
}

impl<S: Scalar> SimOutcome<S> {
    /// The first (for deterministic strategies: the only) arc.
    pub fn first(&self) -> &SimArc<S> {
        &self.arcs[0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Action {
    Jump,
    Flow,
    End(ArcEnd),
}

struct Branch<S> {
    builder: ArcBuilder<S>,
    t: S,
    x: Vec<S>,
    forced: Option<Action>,
}

struct Node {
    in_d: bool,
    can_jump: bool,
    can_flow: Option<bool>,
}

const MAX_NODES: usize = 1_000_000;

pub fn simulate<S: Scalar>(
    sys: &dyn HybridDynamics<S>,
    strategy: &Strategy,
    xi: &[S],
    cfg: &SolverConfig,
) -> Result<SimOutcome<S>, SimError> {
    cfg.validate()?;
    if xi.len() != sys.state_dim() {
        return Err(SimError::Dimension {
            expected: sys.state_dim(),
            found: xi.len(),
        });
    }
    let tol: S = lit(cfg.tol_set);
    let t0 = S::zero();
    if !sys.in_flow_set(t0, 0, xi, tol, Side::Node)?
        && !sys.in_jump_set(t0, 0, xi, tol, Side::Node)?
    {
        return Err(SimError::OutsideDomain {
            m_c: to_f64(sys.flow_margin(t0, 0, xi, Side::Node)?),
            m_d: to_f64(sys.jump_margin(t0, 0, xi, Side::Node)?),
        });
    }
    if let Strategy::Scripted(d) = strategy {
        if d.iter().any(|&v| !(v >= 0.0)) {
            return Err(SimError::Config(super::ConfigError::Invalid {
                field: "scripted durations",
                requirement: "non-negative",
                value: d.iter().copied().find(|v| !(*v >= 0.0)).unwrap_or(f64::NAN),
            }));
        }
    }

    let t_max: S = lit(cfg.horizon_t);
    let mut outcome = SimOutcome {
        arcs: Vec::new(),
        budget_exhausted: false,
        branch_points: 0,
    };
    let mut stack = vec![Branch {
        builder: ArcBuilder::new(t0, xi.to_vec(), None),
        t: t0,
        x: xi.to_vec(),
        forced: None,
    }];
    while let Some(mut br) = stack.pop() {
        let end = run_branch(sys, strategy, cfg, t_max, &mut br, &mut stack, &mut outcome)?;
        outcome.arcs.push(SimArc {
            arc: br.builder.finish(),
            end,
        });
    }
    Ok(outcome)
}

fn run_branch<S: Scalar>(
    sys: &dyn HybridDynamics<S>,
    strategy: &Strategy,
    cfg: &SolverConfig,
    t_max: S,
    br: &mut Branch<S>,
    stack: &mut Vec<Branch<S>>,
    outcome: &mut SimOutcome<S>,
) -> Result<ArcEnd, SimError> {
    let tol: S = lit(cfg.tol_set);
    let tol_event: S = lit(cfg.tol_event);
    for _ in 0..MAX_NODES {
        if br.t >= t_max {
            return Ok(ArcEnd::HorizonT);
        }
        let j = br.builder.j();
        let (t, x) = (br.t, br.x.clone());
        let in_d = sys.in_jump_set(t, j, &x, tol, Side::Node)?;
        let mut node = Node {
            in_d,
            can_jump: in_d && j < cfg.horizon_j,
            can_flow: None,
        };
        let mut can_flow = |node: &mut Node| -> Result<bool, SimError> {
            if let Some(v) = node.can_flow {
                return Ok(v);
            }
            let v = sys.in_flow_set(t, j, &x, tol, Side::Node)?
                && sys.in_flow_set(t, j, &x, tol, Side::Flow)?
                && match sys.viability_override(t, j, &x) {
                    Some(v) => v,
                    None => viability_probe(sys, t, j, &x, cfg)?,
                };
            node.can_flow = Some(v);
            Ok(v)
        };
        let blocked = |node: &Node| {
            if node.in_d {
                ArcEnd::HorizonJ
            } else {
                ArcEnd::DeadEnd
            }
        };

        let mut script_target = None;
        let action = match br.forced.take() {
            Some(a) => a,
            None => match strategy {
                Strategy::JumpingFirst => {
                    if node.in_d {
                        if node.can_jump {
                            Action::Jump
                        } else {
                            Action::End(ArcEnd::HorizonJ)
                        }
                    } else if can_flow(&mut node)? {
                        Action::Flow
                    } else {
                        Action::End(ArcEnd::DeadEnd)
                    }
                }
                Strategy::FlowingFirst => flowing_first(&mut node, &mut can_flow, blocked)?,
                Strategy::EnumerateAll => {
                    let flow_ok = can_flow(&mut node)?;
                    match (node.can_jump, flow_ok) {
                        (true, true) => {
                            if outcome.branch_points < cfg.max_branches {
                                outcome.branch_points += 1;
                                stack.push(Branch {
                                    builder: br.builder.clone(),
                                    t,
                                    x: x.clone(),
                                    forced: Some(Action::Flow),
                                });
                                Action::Jump
                            } else {
                                outcome.budget_exhausted = true;
                                Action::Flow
                            }
                        }
                        (true, false) => Action::Jump,
                        (false, true) => Action::Flow,
                        (false, false) => Action::End(blocked(&node)),
                    }
                }
                Strategy::Scripted(durations) => match durations.get(j) {
                    Some(&d) => {
                        let target = br.builder.interval_start() + lit(d);
                        if t >= target - tol_event {
                            if node.can_jump {
                                Action::Jump
                            } else if node.in_d {
                                Action::End(ArcEnd::HorizonJ)
                            } else {
                                return Err(SimError::ScriptedJumpNotEnabled { t: to_f64(t), j });
                            }
                        } else if can_flow(&mut node)? {
                            script_target = Some(target);
                            Action::Flow
                        } else {
                            return Err(SimError::ScriptedFlowImpossible { t: to_f64(t), j });
                        }
                    }
                    None => flowing_first(&mut node, &mut can_flow, blocked)?,
                },
            },
        };

        match action {
            Action::End(e) => return Ok(e),
            Action::Jump => {
                let xp = sys.jump(t, j, &x)?;
                if !vec::is_finite(&xp) {
                    return Err(SimError::NonFinite { t: to_f64(t) });
                }
                br.builder.jump(t, xp.clone(), None);
                br.x = xp;
            }
            Action::Flow => {
                let entry = match strategy {
                    Strategy::JumpingFirst => JumpEntry::Level,
                    Strategy::EnumerateAll => JumpEntry::Edge,
                    Strategy::FlowingFirst | Strategy::Scripted(_) => JumpEntry::Ignore,
                };
                let mut opts = FlowOptions::new(t_max, entry);
                if entry == JumpEntry::Edge {
                    opts.grazing_grid = Some(lit(cfg.branch_grid));
                }
                opts.stops.extend(script_target);
                let mut r = integrate_flow_with(sys, &x, t, j, cfg, &opts)?;
                if r.duration() <= S::zero() && r.stop == FlowStop::HitJumpSet && !node.can_jump {
                    // in D only on the flow side of an impulse: flow on
                    opts.jump_entry = JumpEntry::Edge;
                    r = integrate_flow_with(sys, &x, t, j, cfg, &opts)?;
                }
                br.builder.set_last_deriv(r.derivs[0].clone());
                for k in 1..r.times.len() {
                    br.builder
                        .push(r.times[k], r.states[k].clone(), r.derivs[k].clone());
                }
                if r.duration() <= S::zero() {
                    match r.stop {
                        FlowStop::HitJumpSet if node.can_jump => br.forced = Some(Action::Jump),
                        FlowStop::HitJumpSet => return Ok(blocked(&node)),
                        _ => return Ok(ArcEnd::DeadEnd),
                    }
                }
                br.t = r.t_end();
                br.x = r.x_end().to_vec();
                if r.stop == FlowStop::ReachedHorizon {
                    return Ok(ArcEnd::HorizonT);
                }
            }
        }
    }
    Ok(ArcEnd::DeadEnd)
}

fn flowing_first<F>(
    node: &mut Node,
    can_flow: &mut F,
    blocked: impl Fn(&Node) -> ArcEnd,
) -> Result<Action, SimError>
where
    F: FnMut(&mut Node) -> Result<bool, SimError>,
{
    Ok(if can_flow(node)? {
        Action::Flow
    } else if node.can_jump {
        Action::Jump
    } else {
        Action::End(blocked(node))
    })
}
