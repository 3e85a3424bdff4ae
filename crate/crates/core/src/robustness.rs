//! Falsification probes for robustness and strong robustness, and the
//! implementation verifier.
//!
//! Probes are semi-decisions: they either exhibit a re-checkable
//! counterexample or report that none was found on the sampled grid.
//!
//! * robustness: every perturbed solution from `ξ + δ𝔹` must be close to some
//!   nominal solution from K;
//! * strong robustness: every nominal solution from ξ must be close to some
//!   perturbed solution from each sampled `ξ_δ`.
//!
//! A query `(T, J, ε)` fails when a failure occurs at the smallest δ of the
//! grid; `delta_star` is the largest grid δ such that no failure occurred at it
//! or at any smaller δ.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arc::HybridArc;
use crate::closeness::{closeness_check, ClosenessError, Witness};
use crate::perturbation::{PerturbationSignal, PerturbedSystem};
use crate::scalar::{lit, vec, Scalar};
use crate::sim::{
    is_solution, simulate, ArcEnd, HybridDynamics, Side, SimError, SolutionReport, SolverConfig,
    Strategy,
};
use crate::system::HybridSystem;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RobustnessError {
    #[error("probe config: {0}")]
    Config(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Closeness(#[from] ClosenessError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeQuery<S> {
    #[serde(rename = "T")]
    pub t: S,
    #[serde(rename = "J")]
    pub j: usize,
    pub eps: S,
}

#[derive(Debug, Clone)]
pub struct RobustnessProbeConfig<S> {
    pub k_samples: Vec<Vec<S>>,
    pub delta_grid: Vec<S>,
    pub signals: Vec<PerturbationSignal<S>>,
    pub queries: Vec<ProbeQuery<S>>,
    pub solver: SolverConfig,
    /// Points of `ξ + δ𝔹` per (ξ, δ): the center, then `±δ` along each axis,
    /// then seeded uniform samples.
    pub init_ball_samples: usize,
    pub seed: u64,
}

impl<S: Scalar> RobustnessProbeConfig<S> {
    pub fn new(
        k_samples: Vec<Vec<S>>,
        delta_grid: Vec<S>,
        signals: Vec<PerturbationSignal<S>>,
        queries: Vec<ProbeQuery<S>>,
        solver: SolverConfig,
    ) -> Self {
        Self {
            k_samples,
            delta_grid,
            signals,
            queries,
            solver,
            init_ball_samples: 1,
            seed: 0,
        }
    }

    fn validate(&self, n: usize) -> Result<(), RobustnessError> {
        let bad = |m: &str| Err(RobustnessError::Config(m.into()));
        if self.k_samples.is_empty()
            || self.delta_grid.is_empty()
            || self.signals.is_empty()
            || self.queries.is_empty()
        {
            return bad("K samples, deltas, signals and queries must be nonempty");
        }
        if self.k_samples.iter().any(|x| x.len() != n) {
            return bad("K sample of the wrong dimension");
        }
        if self.signals.iter().any(|s| s.dim != n) {
            return bad("signal of the wrong dimension");
        }
        if self
            .delta_grid
            .iter()
            .any(|d| !(*d > S::zero() && d.is_finite()))
        {
            return bad("deltas must be positive");
        }
        if self
            .queries
            .iter()
            .any(|q| !(q.eps > S::zero() && q.t >= S::zero()))
        {
            return bad("queries need T >= 0 and eps > 0");
        }
        if self.init_ball_samples == 0 {
            return bad("init_ball_samples must be at least 1");
        }
        self.solver
            .validate()
            .map_err(|e| RobustnessError::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    Robustness,
    StrongRobustness,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    CounterexampleFound,
    NoCounterexampleFound,
}

/// An arc with no (T, J, ε)-close partner among `candidates`.
#[derive(Debug, Clone, Serialize)]
pub struct Counterexample<S> {
    pub kind: ProbeKind,
    pub xi: Vec<S>,
    pub xi_delta: Vec<S>,
    pub delta: S,
    pub signal: String,
    pub query: ProbeQuery<S>,
    /// Perturbed arc (robustness) or nominal arc (strong robustness).
    #[serde(skip)]
    pub subject: HybridArc<S>,
    #[serde(skip)]
    pub candidates: Vec<HybridArc<S>>,
    /// One per candidate, in order.
    pub witnesses: Vec<Witness<S>>,
}

impl<S: Scalar> Counterexample<S> {
    /// Re-runs the closeness checks; `true` when the failure reproduces.
    pub fn recheck(&self) -> Result<bool, ClosenessError> {
        self.recheck_at(self.query.eps)
    }

    pub fn recheck_at(&self, eps: S) -> Result<bool, ClosenessError> {
        for c in &self.candidates {
            if closeness_check(&self.subject, c, self.query.t, self.query.j, eps)?.close {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Coverage {
    pub nominal_runs: usize,
    pub perturbed_runs: usize,
    pub nominal_arcs: usize,
    pub perturbed_arcs: usize,
    pub branch_points: usize,
    /// Runs whose branch budget ran out (enumeration incomplete).
    pub budget_exhausted: usize,
    /// Arcs ending in a dead end before the horizon.
    pub dead_ends: usize,
    /// Ball samples outside the perturbed system's domain.
    pub skipped_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaFailures<S> {
    pub delta: S,
    pub failures: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeReport<S> {
    pub kind: ProbeKind,
    pub verdict: Verdict,
    pub counterexample: Option<Counterexample<S>>,
    /// Failing query count per δ, ascending δ.
    pub per_delta: Vec<DeltaFailures<S>>,
    pub delta_star: Option<S>,
    pub coverage: Coverage,
}

struct Failure<S> {
    delta_idx: usize,
    cx: Counterexample<S>,
}

#[derive(Default)]
struct Tally {
    cov: Coverage,
}

fn ball_points<S: Scalar>(xi: &[S], delta: S, count: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<S>> {
    let n = xi.len();
    let mut out = vec![xi.to_vec()];
    'axes: for i in 0..n {
        for sgn in [S::one(), -S::one()] {
            if out.len() >= count {
                break 'axes;
            }
            let mut p = xi.to_vec();
            p[i] = p[i] + sgn * delta;
            out.push(p);
        }
    }
    while out.len() < count {
        let u: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        if u.iter().map(|v| v * v).sum::<f64>() <= 1.0 {
            out.push(
                xi.iter()
                    .zip(&u)
                    .map(|(&x, &v)| x + delta * lit::<S>(v))
                    .collect(),
            );
        }
    }
    out.truncate(count);
    out
}

/// Ascending, without duplicates.
fn sorted_deltas<S: Scalar>(grid: &[S]) -> Vec<S> {
    let mut d = grid.to_vec();
    d.sort_by(|a, b| a.partial_cmp(b).unwrap());
    d.dedup();
    d
}

struct Task<S> {
    k: usize,
    signal: usize,
    delta_idx: usize,
    xi_delta: Vec<S>,
}

fn tasks<S: Scalar>(cfg: &RobustnessProbeConfig<S>, deltas: &[S]) -> Vec<Task<S>> {
    let mut out = Vec::new();
    for (k, xi) in cfg.k_samples.iter().enumerate() {
        for s in 0..cfg.signals.len() {
            for (di, &d) in deltas.iter().enumerate() {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(((k * cfg.signals.len() + s) * deltas.len() + di) as u64);
                for p in ball_points(xi, d, cfg.init_ball_samples, &mut rng) {
                    out.push(Task {
                        k,
                        signal: s,
                        delta_idx: di,
                        xi_delta: p,
                    });
                }
            }
        }
    }
    out
}

fn enumerate<S: Scalar>(
    sys: &dyn HybridDynamics<S>,
    xi: &[S],
    cfg: &SolverConfig,
    t_max: S,
    tally: &mut Tally,
    nominal: bool,
) -> Result<Vec<HybridArc<S>>, SimError> {
    let out = simulate(sys, &Strategy::EnumerateAll, xi, cfg)?;
    if nominal {
        tally.cov.nominal_runs += 1;
        tally.cov.nominal_arcs += out.arcs.len();
    } else {
        tally.cov.perturbed_runs += 1;
        tally.cov.perturbed_arcs += out.arcs.len();
    }
    tally.cov.branch_points += out.branch_points;
    tally.cov.budget_exhausted += usize::from(out.budget_exhausted);
    tally.cov.dead_ends += out
        .arcs
        .iter()
        .filter(|a| a.end == ArcEnd::DeadEnd && a.arc.end().0 < t_max)
        .count();
    Ok(out.arcs.into_iter().map(|a| a.arc).collect())
}

/// `None` when the start is outside the perturbed domain.
fn perturbed_arcs<S: Scalar>(
    h: &HybridSystem<S>,
    cfg: &RobustnessProbeConfig<S>,
    task: &Task<S>,
    delta: S,
    tally: &mut Tally,
) -> Result<Option<Vec<HybridArc<S>>>, RobustnessError> {
    let p = PerturbedSystem::new(h.clone(), cfg.signals[task.signal].clone(), delta)
        .map_err(|e| RobustnessError::Config(e.to_string()))?;
    let tol: S = lit(cfg.solver.tol_set);
    let z = S::zero();
    if !p.in_flow_set(z, 0, &task.xi_delta, tol, Side::Node)?
        && !p.in_jump_set(z, 0, &task.xi_delta, tol, Side::Node)?
    {
        tally.cov.skipped_samples += 1;
        return Ok(None);
    }
    let t_max = lit(cfg.solver.horizon_t);
    Ok(Some(enumerate(
        &p,
        &task.xi_delta,
        &cfg.solver,
        t_max,
        tally,
        false,
    )?))
}

/// Arcs among `subjects` without a close partner in `candidates`, per query.
fn unmatched<S: Scalar>(
    kind: ProbeKind,
    cfg: &RobustnessProbeConfig<S>,
    task: &Task<S>,
    delta: S,
    subjects: &[HybridArc<S>],
    candidates: &[HybridArc<S>],
) -> Result<Vec<Failure<S>>, RobustnessError> {
    let mut out = Vec::new();
    for q in &cfg.queries {
        for s in subjects {
            // nearest starts first: the verdict does not depend on the order
            let x0 = s.initial_state();
            let mut order: Vec<(S, &HybridArc<S>)> = candidates
                .iter()
                .map(|c| (vec::dist(x0, c.initial_state()), c))
                .collect();
            order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
            let mut witnesses = Vec::with_capacity(candidates.len());
            let mut matched = false;
            for (_, c) in order {
                let v = closeness_check(s, c, q.t, q.j, q.eps)?;
                if v.close {
                    matched = true;
                    break;
                }
                witnesses.extend(v.witness);
            }
            if !matched {
                out.push(Failure {
                    delta_idx: task.delta_idx,
                    cx: Counterexample {
                        kind,
                        xi: cfg.k_samples[task.k].clone(),
                        xi_delta: task.xi_delta.clone(),
                        delta,
                        signal: cfg.signals[task.signal].id.clone(),
                        query: *q,
                        subject: s.clone(),
                        candidates: candidates.to_vec(),
                        witnesses,
                    },
                });
                // one failing arc per query is enough
                break;
            }
        }
    }
    Ok(out)
}

fn assemble<S: Scalar>(
    kind: ProbeKind,
    deltas: &[S],
    results: Vec<(Tally, Vec<Failure<S>>)>,
    mut cov: Coverage,
) -> ProbeReport<S> {
    let mut per_delta: Vec<DeltaFailures<S>> = deltas
        .iter()
        .map(|&d| DeltaFailures {
            delta: d,
            failures: 0,
        })
        .collect();
    let mut at_smallest: Option<Counterexample<S>> = None;
    for (t, fails) in results {
        let c = t.cov;
        cov.perturbed_runs += c.perturbed_runs;
        cov.perturbed_arcs += c.perturbed_arcs;
        cov.nominal_runs += c.nominal_runs;
        cov.nominal_arcs += c.nominal_arcs;
        cov.branch_points += c.branch_points;
        cov.budget_exhausted += c.budget_exhausted;
        cov.dead_ends += c.dead_ends;
        cov.skipped_samples += c.skipped_samples;
        for f in fails {
            per_delta[f.delta_idx].failures += 1;
            // keep the failure with the largest ε at the smallest δ
            if f.delta_idx == 0
                && at_smallest
                    .as_ref()
                    .is_none_or(|b| f.cx.query.eps > b.query.eps)
            {
                at_smallest = Some(f.cx);
            }
        }
    }
    let clean = per_delta.iter().take_while(|d| d.failures == 0).count();
    let delta_star = clean.checked_sub(1).map(|i| deltas[i]);
    ProbeReport {
        kind,
        verdict: if at_smallest.is_some() {
            Verdict::CounterexampleFound
        } else {
            Verdict::NoCounterexampleFound
        },
        counterexample: at_smallest,
        per_delta,
        delta_star,
        coverage: cov,
    }
}

/// Every perturbed solution from `ξ + δ𝔹` must be close to a nominal solution
/// from K (searched over the enumerated nominal solutions of all of K).
pub fn probe_robustness<S: Scalar>(
    h: &HybridSystem<S>,
    cfg: &RobustnessProbeConfig<S>,
) -> Result<ProbeReport<S>, RobustnessError> {
    cfg.validate(h.state_dim)?;
    let deltas = sorted_deltas(&cfg.delta_grid);
    let t_max = lit(cfg.solver.horizon_t);
    let nominal_sets: Vec<(Tally, Vec<HybridArc<S>>)> = cfg
        .k_samples
        .par_iter()
        .map(|xi| {
            let mut t = Tally::default();
            enumerate(h, xi, &cfg.solver, t_max, &mut t, true).map(|a| (t, a))
        })
        .collect::<Result<_, _>>()?;
    let mut cov = Coverage::default();
    let mut nominal = Vec::new();
    for (t, arcs) in nominal_sets {
        cov.nominal_runs += t.cov.nominal_runs;
        cov.nominal_arcs += t.cov.nominal_arcs;
        cov.branch_points += t.cov.branch_points;
        cov.budget_exhausted += t.cov.budget_exhausted;
        cov.dead_ends += t.cov.dead_ends;
        nominal.extend(arcs);
    }
    let results = tasks(cfg, &deltas)
        .par_iter()
        .map(|task| {
            let mut tally = Tally::default();
            let delta = deltas[task.delta_idx];
            let fails = match perturbed_arcs(h, cfg, task, delta, &mut tally)? {
                Some(p) => unmatched(ProbeKind::Robustness, cfg, task, delta, &p, &nominal)?,
                None => Vec::new(),
            };
            Ok((tally, fails))
        })
        .collect::<Result<Vec<_>, RobustnessError>>()?;
    Ok(assemble(ProbeKind::Robustness, &deltas, results, cov))
}

/// Every nominal solution from ξ must be close to a perturbed solution from
/// each sampled `ξ_δ`.
pub fn probe_strong_robustness<S: Scalar>(
    h: &HybridSystem<S>,
    cfg: &RobustnessProbeConfig<S>,
) -> Result<ProbeReport<S>, RobustnessError> {
    cfg.validate(h.state_dim)?;
    let deltas = sorted_deltas(&cfg.delta_grid);
    let t_max = lit(cfg.solver.horizon_t);
    let nominal_sets: Vec<(Tally, Vec<HybridArc<S>>)> = cfg
        .k_samples
        .par_iter()
        .map(|xi| {
            let mut t = Tally::default();
            enumerate(h, xi, &cfg.solver, t_max, &mut t, true).map(|a| (t, a))
        })
        .collect::<Result<_, _>>()?;
    let mut cov = Coverage::default();
    for (t, _) in &nominal_sets {
        cov.nominal_runs += t.cov.nominal_runs;
        cov.nominal_arcs += t.cov.nominal_arcs;
        cov.branch_points += t.cov.branch_points;
        cov.budget_exhausted += t.cov.budget_exhausted;
        cov.dead_ends += t.cov.dead_ends;
    }
    let results = tasks(cfg, &deltas)
        .par_iter()
        .map(|task| {
            let mut tally = Tally::default();
            let delta = deltas[task.delta_idx];
            let fails = match perturbed_arcs(h, cfg, task, delta, &mut tally)? {
                Some(p) => unmatched(
                    ProbeKind::StrongRobustness,
                    cfg,
                    task,
                    delta,
                    &nominal_sets[task.k].1,
                    &p,
                )?,
                None => Vec::new(),
            };
            Ok((tally, fails))
        })
        .collect::<Result<Vec<_>, RobustnessError>>()?;
    Ok(assemble(ProbeKind::StrongRobustness, &deltas, results, cov))
}

#[derive(Debug, Clone, Serialize)]
pub struct ImplementationReport {
    pub samples: usize,
    /// Samples where `x ∈ C_I ∪ D_I` and `x ∈ C ∪ D` disagree.
    pub membership_mismatches: Vec<Vec<f64>>,
    /// Samples with more than one enumerated solution, with the count.
    pub non_unique: Vec<(Vec<f64>, usize)>,
    /// Implementation arcs that are not solutions of the original system.
    pub not_solutions: Vec<(Vec<f64>, SolutionReport)>,
    pub errors: Vec<(Vec<f64>, String)>,
    /// Largest residuals over all checked arcs.
    pub max_flow_residual: f64,
    pub max_jump_residual: f64,
}

impl ImplementationReport {
    pub fn passed(&self) -> bool {
        self.membership_mismatches.is_empty()
            && self.non_unique.is_empty()
            && self.not_solutions.is_empty()
            && self.errors.is_empty()
    }
}

/// Checks that `h_i` implements `h` on the samples: same domain `C ∪ D`,
/// unique solutions, and each solution of `h_i` is a solution of `h`.
pub fn verify_implementation<S: Scalar>(
    h_i: &HybridSystem<S>,
    h: &HybridSystem<S>,
    samples: &[Vec<S>],
    cfg: &SolverConfig,
) -> ImplementationReport {
    let tol: S = lit(cfg.tol_set);
    let as_f64 = |x: &[S]| {
        x.iter()
            .map(|v| v.to_f64().unwrap_or(f64::NAN))
            .collect::<Vec<_>>()
    };
    enum Outcome {
        Mismatch,
        Checked {
            arcs: usize,
            reports: Vec<SolutionReport>,
        },
        Error(String),
    }
    let outcomes: Vec<Outcome> = samples
        .par_iter()
        .map(|x| {
            let dom = |s: &HybridSystem<S>| s.in_c(x, tol) || s.in_d(x, tol);
            if dom(h_i) != dom(h) {
                return Outcome::Mismatch;
            }
            let run = || -> Result<Outcome, SimError> {
                let out = simulate(h_i, &Strategy::EnumerateAll, x, cfg)?;
                let reports = out
                    .arcs
                    .iter()
                    .map(|a| is_solution(&a.arc, h, cfg))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(Outcome::Checked {
                    arcs: out.arcs.len(),
                    reports,
                })
            };
            run().unwrap_or_else(|e| Outcome::Error(e.to_string()))
        })
        .collect();

    let mut rep = ImplementationReport {
        samples: samples.len(),
        membership_mismatches: Vec::new(),
        non_unique: Vec::new(),
        not_solutions: Vec::new(),
        errors: Vec::new(),
        max_flow_residual: 0.0,
        max_jump_residual: 0.0,
    };
    for (x, o) in samples.iter().zip(outcomes) {
        match o {
            Outcome::Mismatch => rep.membership_mismatches.push(as_f64(x)),
            Outcome::Error(e) => rep.errors.push((as_f64(x), e)),
            Outcome::Checked { arcs, reports } => {
                if arcs != 1 {
                    rep.non_unique.push((as_f64(x), arcs));
                }
                for r in reports {
                    rep.max_flow_residual = rep.max_flow_residual.max(r.flow_residual);
                    rep.max_jump_residual = rep.max_jump_residual.max(r.jump_residual);
                    if !r.passed() {
                        rep.not_solutions.push((as_f64(x), r));
                    }
                }
            }
        }
    }
    rep
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ball_points_order_and_radius() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pts = ball_points(&[1.0f64, 2.0], 0.5, 9, &mut rng);
        assert_eq!(pts.len(), 9);
        assert_eq!(pts[0], vec![1.0, 2.0]);
        assert_eq!(pts[1], vec![1.5, 2.0]);
        assert_eq!(pts[2], vec![0.5, 2.0]);
        assert_eq!(pts[3], vec![1.0, 2.5]);
        assert_eq!(pts[4], vec![1.0, 1.5]);
        for p in &pts {
            let d = ((p[0] - 1.0).powi(2) + (p[1] - 2.0).powi(2)).sqrt();
            assert!(d <= 0.5 + 1e-15);
        }
    }

    #[test]
    fn delta_star_is_the_clean_prefix() {
        let deltas = [0.001, 0.01, 0.1];
        let mk = |failures: Vec<usize>| {
            let results = failures
                .into_iter()
                .map(|n| {
                    let fails = (0..n)
                        .map(|_| Failure {
                            delta_idx: 2,
                            cx: Counterexample {
                                kind: ProbeKind::Robustness,
                                xi: vec![0.0],
                                xi_delta: vec![0.0],
                                delta: 0.1,
                                signal: "s".into(),
                                query: ProbeQuery {
                                    t: 1.0,
                                    j: 0,
                                    eps: 0.1,
                                },
                                subject: crate::arc::arc_from_levels(
                                    1,
                                    vec![vec![(0.0, vec![0.0]), (1.0, vec![0.0])]],
                                )
                                .unwrap(),
                                candidates: vec![],
                                witnesses: vec![],
                            },
                        })
                        .collect();
                    (Tally::default(), fails)
                })
                .collect();
            assemble(ProbeKind::Robustness, &deltas, results, Coverage::default())
        };
        let r = mk(vec![1]);
        assert_eq!(r.delta_star, Some(0.01));
        assert_eq!(r.verdict, Verdict::NoCounterexampleFound);
        let r = mk(vec![]);
        assert_eq!(r.delta_star, Some(0.1));
    }
}
