//! Declarative experiments: config loading, batch runs and artifact emission.
//!
//! Runs are the product `nominal_strategies × initial_states` (nominal) plus
//! `initial_states × signals × deltas` under `strategy` (perturbed). Every
//! emitted arc is checked with [`is_solution`] against its generating system
//! before anything is written.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use exmex::prelude::*;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arc::HybridArc;
use crate::builtins::{builtin_signal, builtin_system};
use crate::closeness::{closeness_check, ClosenessVerdict};
use crate::perturbation::{
    make_impulse_signal, make_time_signal, Impulse, PerturbationSignal, PerturbedSystem,
};
use crate::robustness::{
    probe_robustness, probe_strong_robustness, ProbeKind, ProbeQuery, ProbeReport,
    RobustnessProbeConfig,
};
use crate::sim::{
    derive_flowing_first_with, derive_jumping_first, is_solution, simulate, ArcEnd, HybridDynamics,
    Side, SimError, SolutionReport, SolverConfig, Strategy,
};
use crate::system::{linear_map, HybridSystem, MarginFunction};

pub const SCHEMA: &str = "hybridsim/1";

pub const BUILTIN_EXPERIMENTS: &[(&str, &str)] = &[
    (
        "fore-na-sweep",
        include_str!("../experiments/fore-na-sweep.json"),
    ),
    (
        "fore-nb-sweep",
        include_str!("../experiments/fore-nb-sweep.json"),
    ),
    (
        "planar-fig2",
        include_str!("../experiments/planar-fig2.json"),
    ),
];

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment config: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported schema {found:?} (expected {SCHEMA:?})")]
    Schema { found: String },
    #[error("unknown system {0:?}")]
    UnknownSystem(String),
    #[error("unknown signal {id:?} for a system of dimension {dim}")]
    UnknownSignal { id: String, dim: usize },
    #[error("invalid experiment: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("run {run}: {source}")]
    Sim {
        run: String,
        #[source]
        source: SimError,
    },
    #[error("run {run}: emitted arc is not a solution (flow residual {flow}, jump residual {jump}, {violations} set violations)")]
    NotASolution {
        run: String,
        flow: f64,
        jump: f64,
        violations: usize,
    },
}

impl ExperimentError {
    /// Solver-side failure, as opposed to a bad spec or I/O.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            ExperimentError::Sim { .. } | ExperimentError::NotASolution { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SystemRef {
    Id(String),
    Linear(LinearSystemDef),
}

/// `ẋ = A x` on C, `x⁺ = G x` on D. Each set row `[a₁ … aₙ, b]` is the
/// half-space `a·x + b <= 0`; a set is the intersection of its rows (no rows:
/// everything for C, nothing for D).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearSystemDef {
    pub name: String,
    pub flow_matrix: Vec<Vec<f64>>,
    pub jump_matrix: Vec<Vec<f64>>,
    #[serde(default)]
    pub flow_set: Vec<Vec<f64>>,
    #[serde(default)]
    pub jump_set: Vec<Vec<f64>>,
}

impl LinearSystemDef {
    pub fn build(&self) -> Result<HybridSystem<f64>, ExperimentError> {
        let n = self.flow_matrix.len();
        let square = |m: &Vec<Vec<f64>>| m.len() == n && m.iter().all(|r| r.len() == n);
        if n == 0 || !square(&self.flow_matrix) || !square(&self.jump_matrix) {
            return Err(ExperimentError::Invalid(format!(
                "system {:?}: flow and jump matrices must be square of the same size",
                self.name
            )));
        }
        let set = |rows: &[Vec<f64>], empty: MarginFunction<f64>| {
            if rows.iter().any(|r| r.len() != n + 1) {
                return Err(ExperimentError::Invalid(format!(
                    "system {:?}: set rows need {} entries",
                    self.name,
                    n + 1
                )));
            }
            Ok(match rows.len() {
                0 => empty,
                _ => MarginFunction::max_of(
                    rows.iter()
                        .map(|r| MarginFunction::affine(r[..n].to_vec(), r[n]))
                        .collect(),
                ),
            })
        };
        let m_c = set(&self.flow_set, MarginFunction::everywhere())?;
        let m_d = set(&self.jump_set, MarginFunction::empty())?;
        let f = linear_map(self.flow_matrix.clone());
        let g = linear_map(self.jump_matrix.clone());
        Ok(HybridSystem::new(
            self.name.clone(),
            n,
            m_c,
            move |x: &[f64]| f(x),
            m_d,
            move |x: &[f64]| g(x),
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SignalRef {
    Id(String),
    Inline(SignalDef),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SignalDef {
    /// Per-channel component expressions in `t` (missing channels are zero).
    Time { id: String, channels: ChannelExprs },
    Impulse {
        id: String,
        points: Vec<ImpulsePoint>,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelExprs {
    pub n1: Option<Vec<String>>,
    pub n2: Option<Vec<String>>,
    pub n3: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpulsePoint {
    pub t: f64,
    pub j: usize,
    pub channel: usize,
    pub value: Vec<f64>,
}

impl SignalRef {
    pub fn id(&self) -> &str {
        match self {
            SignalRef::Id(id) => id,
            SignalRef::Inline(SignalDef::Time { id, .. } | SignalDef::Impulse { id, .. }) => id,
        }
    }

    pub fn build(&self, dim: usize) -> Result<PerturbationSignal<f64>, ExperimentError> {
        match self {
            SignalRef::Id(id) => {
                builtin_signal(id, dim).ok_or_else(|| ExperimentError::UnknownSignal {
                    id: id.clone(),
                    dim,
                })
            }
            SignalRef::Inline(SignalDef::Impulse { id, points }) => make_impulse_signal(
                id.clone(),
                dim,
                points
                    .iter()
                    .map(|p| Impulse {
                        t: p.t,
                        j: p.j,
                        channel: p.channel,
                        value: p.value.clone(),
                    })
                    .collect(),
            )
            .map_err(|e| ExperimentError::Invalid(format!("signal {id:?}: {e}"))),
            SignalRef::Inline(SignalDef::Time { id, channels }) => {
                let parse = |c: &Option<Vec<String>>| -> Result<Vec<TimeExpr>, ExperimentError> {
                    let Some(c) = c else {
                        return Ok((0..dim).map(|_| TimeExpr::parse("0").unwrap()).collect());
                    };
                    if c.len() != dim {
                        return Err(ExperimentError::Invalid(format!(
                            "signal {id:?}: channel needs {dim} components, got {}",
                            c.len()
                        )));
                    }
                    c.iter()
                        .map(|s| {
                            TimeExpr::parse(s).map_err(|e| {
                                ExperimentError::Invalid(format!("signal {id:?}: {e}"))
                            })
                        })
                        .collect()
                };
                let exprs = [
                    parse(&channels.n1)?,
                    parse(&channels.n2)?,
                    parse(&channels.n3)?,
                ];
                Ok(make_time_signal(id.clone(), dim, move |t: f64| {
                    exprs
                        .each_ref()
                        .map(|c| c.iter().map(|e| e.eval(t)).collect())
                }))
            }
        }
    }
}

/// Scalar expression in `t` (functions `sin`, `cos`, `exp`, …; constants `PI`, `E`).
struct TimeExpr {
    expr: FlatEx<f64>,
    uses_t: bool,
}

impl TimeExpr {
    fn parse(text: &str) -> Result<Self, String> {
        let expr = exmex::parse::<f64>(text).map_err(|e| format!("{text:?}: {e}"))?;
        let uses_t = match expr.var_names() {
            [] => false,
            [v] if v == "t" => true,
            vars => {
                return Err(format!(
                    "{text:?}: unknown variables {vars:?} (only t is allowed)"
                ))
            }
        };
        let e = Self { expr, uses_t };
        if !e.eval(0.0).is_finite() {
            return Err(format!("{text:?} is not finite at t = 0"));
        }
        Ok(e)
    }

    fn eval(&self, t: f64) -> f64 {
        let r = if self.uses_t {
            self.expr.eval(&[t])
        } else {
            self.expr.eval(&[])
        };
        r.unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Query {
    #[serde(rename = "T")]
    pub t: f64,
    #[serde(rename = "J")]
    pub j: usize,
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub schema: String,
    pub id: String,
    pub system: SystemRef,
    /// Strategy of the perturbed runs.
    #[serde(default = "default_strategy")]
    pub strategy: Strategy,
    /// Strategies of the unperturbed runs (none: no nominal arcs).
    #[serde(default)]
    pub nominal_strategies: Vec<Strategy>,
    pub initial_states: Vec<Vec<f64>>,
    /// Perturbed runs start at `ξ + δ·initial_offset`.
    #[serde(default)]
    pub initial_offset: Option<Vec<f64>>,
    #[serde(default)]
    pub signals: Vec<SignalRef>,
    #[serde(default)]
    pub deltas: Vec<f64>,
    /// Closeness of every perturbed arc against every nominal arc.
    #[serde(default)]
    pub queries: Vec<Query>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub solver: SolverConfig,
}

fn default_strategy() -> Strategy {
    Strategy::JumpingFirst
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        // check the schema first so a version mismatch is not reported as a field error
        let raw: serde_json::Value = serde_json::from_str(text)?;
        match raw.get("schema").and_then(|s| s.as_str()) {
            Some(SCHEMA) => {}
            other => {
                return Err(ExperimentError::Schema {
                    found: other.unwrap_or("<missing>").to_string(),
                })
            }
        }
        let spec: Self = serde_json::from_value(raw)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path).map_err(|source| ExperimentError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn builtin(id: &str) -> Option<Self> {
        BUILTIN_EXPERIMENTS
            .iter()
            .find(|(name, _)| *name == id)
            .map(|(_, text)| Self::from_json(text).expect("built-in experiment specs are valid"))
    }

    pub fn build_system(&self) -> Result<HybridSystem<f64>, ExperimentError> {
        match &self.system {
            SystemRef::Id(id) => {
                builtin_system(id).ok_or_else(|| ExperimentError::UnknownSystem(id.clone()))
            }
            SystemRef::Linear(def) => def.build(),
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let invalid = |m: String| Err(ExperimentError::Invalid(m));
        self.solver
            .validate()
            .map_err(|e| ExperimentError::Invalid(e.to_string()))?;
        let h = self.build_system()?;
        let n = h.state_dim;
        if self.initial_states.is_empty() {
            return invalid("no initial states".into());
        }
        if let Some(x) = self.initial_states.iter().find(|x| x.len() != n) {
            return invalid(format!("initial state {x:?} does not have dimension {n}"));
        }
        if matches!(&self.initial_offset, Some(o) if o.len() != n) {
            return invalid(format!("initial_offset must have dimension {n}"));
        }
        if self.signals.is_empty() != self.deltas.is_empty() {
            return invalid("signals and deltas must be given together".into());
        }
        if let Some(d) = self.deltas.iter().find(|d| !(d.is_finite() && **d > 0.0)) {
            return invalid(format!("delta {d} must be positive"));
        }
        if self.signals.is_empty() && self.nominal_strategies.is_empty() {
            return invalid("nothing to run: no signals and no nominal strategies".into());
        }
        if let Some(q) = self.queries.iter().find(|q| !(q.eps > 0.0 && q.t >= 0.0)) {
            return invalid(format!("query {q:?} needs T >= 0 and eps > 0"));
        }
        for s in &self.signals {
            s.build(n)?;
        }
        Ok(())
    }
}

/// Which system a probe or verification runs on.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Implementation {
    /// The system as defined.
    #[default]
    Original,
    /// `H^D`: flow only outside D.
    JumpingFirst,
    /// `H^C`: jump only where no viable flow exists.
    FlowingFirst,
}

impl Implementation {
    pub fn apply(self, h: &HybridSystem<f64>, cfg: &SolverConfig) -> HybridSystem<f64> {
        match self {
            Implementation::Original => h.clone(),
            Implementation::JumpingFirst => derive_jumping_first(h),
            Implementation::FlowingFirst => derive_flowing_first_with(h, cfg),
        }
    }
}

/// Declarative robustness / strong-robustness probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSpec {
    pub schema: String,
    pub system: SystemRef,
    #[serde(default)]
    pub implementation: Implementation,
    pub kind: ProbeKind,
    pub k_samples: Vec<Vec<f64>>,
    pub delta_grid: Vec<f64>,
    pub signals: Vec<SignalRef>,
    pub queries: Vec<Query>,
    #[serde(default = "one")]
    pub init_ball_samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub solver: SolverConfig,
}

fn one() -> usize {
    1
}

impl ProbeSpec {
    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        let raw: serde_json::Value = serde_json::from_str(text)?;
        match raw.get("schema").and_then(|s| s.as_str()) {
            Some(SCHEMA) => Ok(serde_json::from_value(raw)?),
            other => Err(ExperimentError::Schema {
                found: other.unwrap_or("<missing>").to_string(),
            }),
        }
    }

    pub fn system(&self) -> Result<HybridSystem<f64>, ExperimentError> {
        let h = match &self.system {
            SystemRef::Id(id) => {
                builtin_system(id).ok_or_else(|| ExperimentError::UnknownSystem(id.clone()))?
            }
            SystemRef::Linear(def) => def.build()?,
        };
        Ok(self.implementation.apply(&h, &self.solver))
    }

    pub fn probe_config(&self, dim: usize) -> Result<RobustnessProbeConfig<f64>, ExperimentError> {
        let mut cfg = RobustnessProbeConfig::new(
            self.k_samples.clone(),
            self.delta_grid.clone(),
            self.signals
                .iter()
                .map(|s| s.build(dim))
                .collect::<Result<_, _>>()?,
            self.queries
                .iter()
                .map(|q| ProbeQuery {
                    t: q.t,
                    j: q.j,
                    eps: q.eps,
                })
                .collect(),
            self.solver.clone(),
        );
        cfg.init_ball_samples = self.init_ball_samples;
        cfg.seed = self.seed;
        Ok(cfg)
    }

    pub fn run(&self) -> Result<ProbeReport<f64>, crate::Error> {
        let h = self.system()?;
        let cfg = self.probe_config(h.state_dim)?;
        Ok(match self.kind {
            ProbeKind::Robustness => probe_robustness(&h, &cfg)?,
            ProbeKind::StrongRobustness => probe_strong_robustness(&h, &cfg)?,
        })
    }
}

/// Per-arc metadata, written next to each CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub system: String,
    pub strategy: String,
    pub xi: Vec<f64>,
    pub delta: f64,
    /// `None` for nominal runs.
    pub signal: Option<String>,
    pub jump_times: Vec<f64>,
    pub stop_reason: ArcEnd,
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub label: String,
    pub meta: RunMetadata,
    pub arc: HybridArc<f64>,
    pub residuals: SolutionReport,
    /// `(t, j, e1, e2, e3)` at each breakpoint of perturbed arcs.
    pub signal_samples: Vec<(f64, usize, [Vec<f64>; 3])>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub perturbed: String,
    pub nominal: String,
    pub query: Query,
    pub verdict: ClosenessVerdict<f64>,
}

#[derive(Debug, Clone)]
pub struct ExperimentBundle {
    pub id: String,
    pub runs: Vec<RunRecord>,
    pub comparisons: Vec<Comparison>,
    pub summary: String,
    pub files: Vec<PathBuf>,
}

impl ExperimentBundle {
    pub fn report_json(&self) -> serde_json::Value {
        #[derive(Serialize)]
        struct RunEntry<'a> {
            label: &'a str,
            #[serde(flatten)]
            meta: &'a RunMetadata,
            first_jump: Option<f64>,
            residuals: &'a SolutionReport,
        }
        let runs: Vec<_> = self
            .runs
            .iter()
            .map(|r| RunEntry {
                label: &r.label,
                meta: &r.meta,
                first_jump: r.meta.jump_times.first().copied(),
                residuals: &r.residuals,
            })
            .collect();
        serde_json::json!({
            "schema": SCHEMA,
            "id": self.id,
            "runs": runs,
            "comparisons": self.comparisons,
        })
    }
}

struct RunPlan {
    label: String,
    strategy: Strategy,
    xi: Vec<f64>,
    perturbation: Option<(usize, f64)>,
}

fn delta_tag(d: f64) -> String {
    format!("{d:e}")
}

/// Runs every (strategy, initial state, signal, δ) combination; writes
/// artifacts when `out` (or the spec's `output_dir`) is given.
pub fn run_experiment(
    spec: &ExperimentSpec,
    out: Option<&Path>,
) -> Result<ExperimentBundle, ExperimentError> {
    spec.validate()?;
    let h = spec.build_system()?;
    let n = h.state_dim;
    let signals: Vec<PerturbationSignal<f64>> = spec
        .signals
        .iter()
        .map(|s| s.build(n))
        .collect::<Result<_, _>>()?;

    let mut plans = Vec::new();
    for (i, xi) in spec.initial_states.iter().enumerate() {
        for st in &spec.nominal_strategies {
            plans.push(RunPlan {
                label: format!("{}-nominal-x{i}", st.id()),
                strategy: st.clone(),
                xi: xi.clone(),
                perturbation: None,
            });
        }
        for (k, sig) in signals.iter().enumerate() {
            for &d in &spec.deltas {
                let xi_d = match &spec.initial_offset {
                    Some(o) => xi.iter().zip(o).map(|(a, b)| a + d * b).collect(),
                    None => xi.clone(),
                };
                plans.push(RunPlan {
                    label: format!("{}-{}-d{}-x{i}", spec.strategy.id(), sig.id, delta_tag(d)),
                    strategy: spec.strategy.clone(),
                    xi: xi_d,
                    perturbation: Some((k, d)),
                });
            }
        }
    }

    let batches: Vec<Vec<RunRecord>> = plans
        .par_iter()
        .map(|p| execute(&h, &signals, p, &spec.solver))
        .collect::<Result<_, _>>()?;
    let runs: Vec<RunRecord> = batches.into_iter().flatten().collect();

    let mut comparisons = Vec::new();
    for p in runs.iter().filter(|r| r.meta.signal.is_some()) {
        for nom in runs.iter().filter(|r| r.meta.signal.is_none()) {
            for q in &spec.queries {
                let verdict = closeness_check(&p.arc, &nom.arc, q.t, q.j, q.eps)
                    .map_err(|e| ExperimentError::Invalid(e.to_string()))?;
                comparisons.push(Comparison {
                    perturbed: p.label.clone(),
                    nominal: nom.label.clone(),
                    query: *q,
                    verdict,
                });
            }
        }
    }

    let mut summary = format!("experiment {} ({} runs)\n", spec.id, runs.len());
    for r in &runs {
        let first = r
            .meta
            .jump_times
            .first()
            .map_or("none".to_string(), |t| format!("{t:.6}"));
        let _ = writeln!(
            summary,
            "{}: first jump {first}, {} jumps, end {:?}, flow residual {:.2e}",
            r.label,
            r.meta.jump_times.len(),
            r.meta.stop_reason,
            r.residuals.flow_residual
        );
    }
    for c in &comparisons {
        let _ = writeln!(
            summary,
            "{} vs {} at (T={}, J={}, eps={}): {}",
            c.perturbed,
            c.nominal,
            c.query.t,
            c.query.j,
            c.query.eps,
            if c.verdict.close {
                "close"
            } else {
                "not close"
            }
        );
    }

    let mut bundle = ExperimentBundle {
        id: spec.id.clone(),
        runs,
        comparisons,
        summary,
        files: Vec::new(),
    };
    if let Some(dir) = out
        .map(Path::to_path_buf)
        .or_else(|| spec.output_dir.clone())
    {
        bundle.files = write_bundle(&bundle, &dir)?;
    }
    Ok(bundle)
}

fn execute(
    h: &HybridSystem<f64>,
    signals: &[PerturbationSignal<f64>],
    plan: &RunPlan,
    cfg: &SolverConfig,
) -> Result<Vec<RunRecord>, ExperimentError> {
    let sim_err = |source| ExperimentError::Sim {
        run: plan.label.clone(),
        source,
    };
    let perturbed = match plan.perturbation {
        Some((k, d)) => Some(
            PerturbedSystem::new(h.clone(), signals[k].clone(), d)
                .map_err(|e| ExperimentError::Invalid(format!("run {}: {e}", plan.label)))?,
        ),
        None => None,
    };
    let sys: &dyn HybridDynamics<f64> = match &perturbed {
        Some(p) => p,
        None => h,
    };
    let outcome = simulate(sys, &plan.strategy, &plan.xi, cfg).map_err(sim_err)?;
    let many = outcome.arcs.len() > 1;
    let mut out = Vec::with_capacity(outcome.arcs.len());
    for (b, sa) in outcome.arcs.into_iter().enumerate() {
        let label = if many {
            format!("{}-b{b}", plan.label)
        } else {
            plan.label.clone()
        };
        let residuals = is_solution(&sa.arc, sys, cfg).map_err(sim_err)?;
        if !residuals.passed() {
            return Err(ExperimentError::NotASolution {
                run: label,
                flow: residuals.flow_residual,
                jump: residuals.jump_residual,
                violations: residuals.flow_set_violations.len()
                    + residuals.jump_set_violations.len(),
            });
        }
        let mut signal_samples = Vec::new();
        if let Some(p) = &perturbed {
            for (j, seg) in sa.arc.segments().iter().enumerate() {
                for (t, x) in seg.times.iter().zip(&seg.states) {
                    signal_samples.push((*t, j, p.offsets(*t, j, x, Side::Node).map_err(sim_err)?));
                }
            }
        }
        out.push(RunRecord {
            meta: RunMetadata {
                system: h.name.clone(),
                strategy: plan.strategy.id().to_string(),
                xi: plan.xi.clone(),
                delta: plan.perturbation.map_or(0.0, |(_, d)| d),
                signal: plan.perturbation.map(|(k, _)| signals[k].id.clone()),
                jump_times: sa.arc.jump_times(),
                stop_reason: sa.end,
            },
            label,
            arc: sa.arc,
            residuals,
            signal_samples,
        });
    }
    Ok(out)
}

fn signal_csv(rec: &RunRecord) -> String {
    let n = rec.arc.state_dim();
    let mut s = String::from("t,j");
    for c in 1..=3 {
        for i in 1..=n {
            let _ = write!(s, ",e{c}_{i}");
        }
    }
    s.push('\n');
    for (t, j, e) in &rec.signal_samples {
        let _ = write!(s, "{t},{j}");
        for v in e.iter().flatten() {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

fn write_bundle(bundle: &ExperimentBundle, dir: &Path) -> Result<Vec<PathBuf>, ExperimentError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| ExperimentError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let mut files = Vec::new();
    let mut put = |name: String, body: String| -> Result<(), ExperimentError> {
        let path = dir.join(name);
        fs::write(&path, body).map_err(io(&path))?;
        files.push(path);
        Ok(())
    };
    for r in &bundle.runs {
        put(format!("{}.csv", r.label), r.arc.to_csv())?;
        put(format!("{}.json", r.label), r.arc.to_json())?;
        put(
            format!("{}.meta.json", r.label),
            serde_json::to_string_pretty(&r.meta).expect("metadata serializes"),
        )?;
        if r.meta.signal.is_some() {
            put(format!("{}.signal.csv", r.label), signal_csv(r))?;
        }
    }
    put(
        "report.json".into(),
        serde_json::to_string_pretty(&bundle.report_json()).expect("report serializes"),
    )?;
    put("summary.txt".into(), bundle.summary.clone())?;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_specs_parse() {
        for (id, _) in BUILTIN_EXPERIMENTS {
            let s = ExperimentSpec::builtin(id).unwrap();
            assert_eq!(&s.id, id);
        }
    }

    #[test]
    fn schema_is_checked() {
        let e = ExperimentSpec::from_json(r#"{"schema":"hybridsim/0","id":"x"}"#).unwrap_err();
        assert!(matches!(e, ExperimentError::Schema { .. }));
        let e = ExperimentSpec::from_json(r#"{"id":"x"}"#).unwrap_err();
        assert!(matches!(e, ExperimentError::Schema { .. }));
    }

    #[test]
    fn inline_linear_system_and_expression_signal() {
        let text = r#"{
            "schema": "hybridsim/1",
            "id": "decay",
            "system": {
                "name": "decay",
                "flow_matrix": [[-1.0]],
                "jump_matrix": [[0.0]],
                "flow_set": [],
                "jump_set": []
            },
            "nominal_strategies": ["flowing_first"],
            "initial_states": [[1.0]],
            "signals": [{"kind": "time", "id": "wiggle", "channels": {"n2": ["0.5*sin(2*PI*t)"]}}],
            "deltas": [0.01],
            "queries": [{"T": 1.0, "J": 0, "eps": 0.05}],
            "solver": {"horizon_T": 1.0}
        }"#;
        let spec = ExperimentSpec::from_json(text).unwrap();
        let b = run_experiment(&spec, None).unwrap();
        assert_eq!(b.runs.len(), 2);
        let nom = &b.runs[0];
        let x1 = nom.arc.eval(1.0, 0).unwrap()[0];
        assert!((x1 - (-1.0f64).exp()).abs() < 1e-8);
        assert_eq!(b.comparisons.len(), 1);
        assert!(b.comparisons[0].verdict.close);
    }

    #[test]
    fn unknown_expression_is_rejected() {
        let s = SignalRef::Inline(SignalDef::Time {
            id: "bad".into(),
            channels: ChannelExprs {
                n1: Some(vec!["gamma(t)".into()]),
                ..Default::default()
            },
        });
        assert!(matches!(s.build(1), Err(ExperimentError::Invalid(_))));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = r#"{"schema":"hybridsim/1","id":"x","system":"planar-ex32","initial_states":[[-1,1]],
            "nominal_strategies":["jumping_first"],"bogus":1}"#;
        assert!(matches!(
            ExperimentSpec::from_json(text),
            Err(ExperimentError::Json(_))
        ));
    }
}
