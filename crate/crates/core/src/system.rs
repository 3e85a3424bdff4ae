//! Hybrid systems `H = (C, f, D, g)` with sets given by continuous margins.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::scalar::{lit, to_f64, vec, Scalar};
use crate::sim::{
    integrate_flow_with, viability_in_c, FlowOptions, HybridDynamics, JumpEntry, Side, SimError,
    SolverConfig,
};

pub type VecMap<S> = Arc<dyn Fn(&[S]) -> Vec<S> + Send + Sync>;
pub type StatePredicate<S> = Arc<dyn Fn(&[S]) -> bool + Send + Sync>;
pub type ScalarMap<S> = Arc<dyn Fn(&[S]) -> S + Send + Sync>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SystemError {
    #[error("{what}: expected dimension {expected}, found {found}")]
    Dimension {
        what: String,
        expected: usize,
        found: usize,
    },
    #[error("point #{index} is outside C ∪ D")]
    PointOutside { index: usize },
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Continuous function whose sublevel set `{x : m(x) <= 0}` is the set.
#[derive(Clone)]
pub struct MarginFunction<S> {
    eval: ScalarMap<S>,
    description: String,
}

impl<S: Scalar> MarginFunction<S> {
    pub fn new(
        description: impl Into<String>,
        f: impl Fn(&[S]) -> S + Send + Sync + 'static,
    ) -> Self {
        Self {
            eval: Arc::new(f),
            description: description.into(),
        }
    }

    pub fn eval(&self, x: &[S]) -> S {
        (self.eval)(x)
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    /// `m ≡ +1`: the empty set.
    pub fn empty() -> Self {
        Self::new("empty", |_| S::one())
    }

    /// `m ≡ -1`: the whole space.
    pub fn everywhere() -> Self {
        Self::new("everywhere", |_| -S::one())
    }

    /// Half-space `a·x + b <= 0`.
    pub fn affine(a: Vec<S>, b: S) -> Self {
        let desc = format!("affine({a:?}, {b})");
        Self::new(desc, move |x| {
            a.iter().zip(x).fold(b, |acc, (&ai, &xi)| acc + ai * xi)
        })
    }

    /// Intersection.
    pub fn max_of(parts: Vec<MarginFunction<S>>) -> Self {
        let desc = format!(
            "max({})",
            parts
                .iter()
                .map(|p| p.description.as_str())
                .collect::<Vec<_>>()
                .join(", ")
        );
        Self::new(desc, move |x| {
            parts
                .iter()
                .map(|p| p.eval(x))
                .fold(S::neg_infinity(), S::max)
        })
    }

    /// Union.
    pub fn min_of(parts: Vec<MarginFunction<S>>) -> Self {
        let desc = format!(
            "min({})",
            parts
                .iter()
                .map(|p| p.description.as_str())
                .collect::<Vec<_>>()
                .join(", ")
        );
        Self::new(desc, move |x| {
            parts.iter().map(|p| p.eval(x)).fold(S::infinity(), S::min)
        })
    }

    /// Closure of the complement.
    pub fn negate(&self) -> Self {
        let inner = self.clone();
        Self::new(format!("-({})", self.description), move |x| -inner.eval(x))
    }
}

impl<S> fmt::Debug for MarginFunction<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MarginFunction({})", self.description)
    }
}

/// Points removed from a margin set.
#[derive(Clone)]
pub enum Exclusion<S> {
    /// Remove `{m <= tol}`.
    Sublevel(MarginFunction<S>),
    Predicate {
        test: StatePredicate<S>,
        description: String,
    },
}

impl<S> fmt::Debug for Exclusion<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Exclusion::Sublevel(m) => write!(f, "Sublevel({})", m.description),
            Exclusion::Predicate { description, .. } => write!(f, "Predicate({description})"),
        }
    }
}

/// `{m <= tol}` minus the exclusions.
#[derive(Clone, Debug)]
pub struct SetSpec<S> {
    pub margin: MarginFunction<S>,
    pub exclusions: Vec<Exclusion<S>>,
}

impl<S: Scalar> SetSpec<S> {
    pub fn from_margin(margin: MarginFunction<S>) -> Self {
        Self {
            margin,
            exclusions: Vec::new(),
        }
    }

    pub fn excluded(&self, x: &[S], tol: S) -> bool {
        self.exclusions.iter().any(|e| match e {
            Exclusion::Sublevel(m) => m.eval(x) <= tol,
            Exclusion::Predicate { test, .. } => test(x),
        })
    }

    pub fn contains(&self, x: &[S], tol: S) -> bool {
        self.margin.eval(x) <= tol && !self.excluded(x, tol)
    }
}

#[derive(Clone)]
pub struct HybridSystem<S> {
    pub name: String,
    pub state_dim: usize,
    pub flow_set: SetSpec<S>,
    pub jump_set: SetSpec<S>,
    pub f: VecMap<S>,
    pub g: VecMap<S>,
    /// Analytic membership test for C* (points of C with a viable flow).
    pub viability_override: Option<StatePredicate<S>>,
}

impl<S: fmt::Debug> fmt::Debug for HybridSystem<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HybridSystem")
            .field("name", &self.name)
            .field("state_dim", &self.state_dim)
            .field("flow_set", &self.flow_set)
            .field("jump_set", &self.jump_set)
            .field("viability_override", &self.viability_override.is_some())
            .finish()
    }
}

impl<S: Scalar> HybridSystem<S> {
    pub fn new(
        name: impl Into<String>,
        state_dim: usize,
        m_c: MarginFunction<S>,
        f: impl Fn(&[S]) -> Vec<S> + Send + Sync + 'static,
        m_d: MarginFunction<S>,
        g: impl Fn(&[S]) -> Vec<S> + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            state_dim,
            flow_set: SetSpec::from_margin(m_c),
            jump_set: SetSpec::from_margin(m_d),
            f: Arc::new(f),
            g: Arc::new(g),
            viability_override: None,
        }
    }

    pub fn with_viability_override(
        mut self,
        p: impl Fn(&[S]) -> bool + Send + Sync + 'static,
    ) -> Self {
        self.viability_override = Some(Arc::new(p));
        self
    }

    pub fn m_c(&self, x: &[S]) -> S {
        self.flow_set.margin.eval(x)
    }

    pub fn m_d(&self, x: &[S]) -> S {
        self.jump_set.margin.eval(x)
    }

    pub fn in_c(&self, x: &[S], tol: S) -> bool {
        self.flow_set.contains(x, tol)
    }

    pub fn in_d(&self, x: &[S], tol: S) -> bool {
        self.jump_set.contains(x, tol)
    }

    pub fn flow_map(&self, x: &[S]) -> Vec<S> {
        (self.f)(x)
    }

    pub fn jump_map(&self, x: &[S]) -> Vec<S> {
        (self.g)(x)
    }

    fn check_dim(&self, x: &[S]) -> Result<(), SimError> {
        if x.len() != self.state_dim {
            return Err(SimError::Dimension {
                expected: self.state_dim,
                found: x.len(),
            });
        }
        Ok(())
    }
}

impl<S: Scalar> HybridDynamics<S> for HybridSystem<S> {
    fn name(&self) -> &str {
        &self.name
    }

    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn flow(&self, _t: S, _j: usize, x: &[S]) -> Result<Vec<S>, SimError> {
        self.check_dim(x)?;
        Ok(self.flow_map(x))
    }

    fn jump(&self, _t: S, _j: usize, x: &[S]) -> Result<Vec<S>, SimError> {
        self.check_dim(x)?;
        Ok(self.jump_map(x))
    }

    fn flow_margin(&self, _t: S, _j: usize, x: &[S], _side: Side) -> Result<S, SimError> {
        Ok(self.m_c(x))
    }

    fn jump_margin(&self, _t: S, _j: usize, x: &[S], _side: Side) -> Result<S, SimError> {
        Ok(self.m_d(x))
    }

    fn in_flow_set(
        &self,
        _t: S,
        _j: usize,
        x: &[S],
        tol: S,
        _side: Side,
    ) -> Result<bool, SimError> {
        Ok(self.in_c(x, tol))
    }

    fn in_jump_set(
        &self,
        _t: S,
        _j: usize,
        x: &[S],
        tol: S,
        _side: Side,
    ) -> Result<bool, SimError> {
        Ok(self.in_d(x, tol))
    }

    fn viability_override(&self, _t: S, _j: usize, x: &[S]) -> Option<bool> {
        self.viability_override.as_ref().map(|p| p(x))
    }
}

pub type PlantFlow<S> = Arc<dyn Fn(&[S], &[S]) -> Vec<S> + Send + Sync>;

/// Plant `ẋ_p = f_p(x_p, u)` in feedback with a hybrid controller
/// `(C_c, f_c, D_c, g_c)` through `u = k_c(x_p, x_c)`. Controller sets and
/// maps act on the full state `(x_p, x_c)`.
#[derive(Clone)]
pub struct ControlLoopSpec<S> {
    pub name: String,
    pub n_p: usize,
    pub n_c: usize,
    pub n_r: usize,
    pub f_p: PlantFlow<S>,
    pub m_c: MarginFunction<S>,
    pub f_c: VecMap<S>,
    pub m_d: MarginFunction<S>,
    pub g_c: VecMap<S>,
    pub k_c: VecMap<S>,
}

impl<S: Scalar> ControlLoopSpec<S> {
    fn check(&self) -> Result<(), SystemError> {
        let n = self.n_p + self.n_c;
        let x = vec![S::zero(); n];
        let u = (self.k_c)(&x);
        let want = |what: &str, expected: usize, found: usize| {
            if expected == found {
                Ok(())
            } else {
                Err(SystemError::Dimension {
                    what: what.to_string(),
                    expected,
                    found,
                })
            }
        };
        want("k_c output", self.n_r, u.len())?;
        want("f_p output", self.n_p, (self.f_p)(&x[..self.n_p], &u).len())?;
        want("f_c output", self.n_c, (self.f_c)(&x).len())?;
        want("g_c output", self.n_c, (self.g_c)(&x).len())?;
        Ok(())
    }
}

/// Closed loop on `(x_p, x_c)`: flow `(f_p(x_p, k_c(x)), f_c(x))`, jump
/// `(x_p, g_c(x))`, sets from the controller.
pub fn build_closed_loop<S: Scalar>(
    spec: &ControlLoopSpec<S>,
) -> Result<HybridSystem<S>, SystemError> {
    spec.check()?;
    let n_p = spec.n_p;
    let (f_p, f_c, k_c, g_c) = (
        spec.f_p.clone(),
        spec.f_c.clone(),
        spec.k_c.clone(),
        spec.g_c.clone(),
    );
    let flow = move |x: &[S]| {
        let u = k_c(x);
        let mut dx = f_p(&x[..n_p], &u);
        dx.extend(f_c(x));
        dx
    };
    let jump = move |x: &[S]| {
        let mut out = x[..n_p].to_vec();
        out.extend(g_c(x));
        out
    };
    Ok(HybridSystem::new(
        spec.name.clone(),
        n_p + spec.n_c,
        spec.m_c.clone(),
        flow,
        spec.m_d.clone(),
        jump,
    ))
}

/// `x ↦ M x`.
pub fn linear_map<S: Scalar>(m: Vec<Vec<S>>) -> VecMap<S> {
    Arc::new(move |x: &[S]| {
        m.iter()
            .map(|row| {
                row.iter()
                    .zip(x)
                    .fold(S::zero(), |acc, (&a, &b)| acc + a * b)
            })
            .collect()
    })
}

/// Axis-aligned sampling region.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoxRegion<S> {
    pub lo: Vec<S>,
    pub hi: Vec<S>,
}

impl<S: Scalar> BoxRegion<S> {
    pub fn new(lo: Vec<S>, hi: Vec<S>) -> Self {
        assert_eq!(lo.len(), hi.len(), "box bounds must have equal length");
        Self { lo, hi }
    }

    pub fn cube(dim: usize, half_width: S) -> Self {
        Self::new(vec![-half_width; dim], vec![half_width; dim])
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<S> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(&a, &b)| a + (b - a) * lit(rng.gen::<f64>()))
            .collect()
    }

    /// `n` points kept by `keep`, from a ChaCha8 stream seeded with `seed`
    /// (gives up after `1000 n` draws).
    pub fn sample_seeded(&self, n: usize, seed: u64, keep: impl Fn(&[S]) -> bool) -> Vec<Vec<S>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(n);
        for _ in 0..1000 * n {
            if out.len() == n {
                break;
            }
            let x = self.sample(&mut rng);
            if keep(&x) {
                out.push(x);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum AuditViolation {
    NonFiniteFlow {
        x: Vec<f64>,
    },
    NonFiniteJump {
        x: Vec<f64>,
    },
    JumpLeavesDomain {
        x: Vec<f64>,
        gx: Vec<f64>,
    },
    /// Empirical Lipschitz modulus grows as the probe scale shrinks.
    Discontinuous {
        map: &'static str,
        modulus: [f64; 3],
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BasicConditionsReport {
    /// Closedness of C and D holds by construction (continuous margins).
    pub sets_closed_structurally: bool,
    pub samples: usize,
    pub samples_in_d: usize,
    /// Empirical moduli at probe scales 1e-2, 1e-4, 1e-6.
    pub f_modulus: [f64; 3],
    pub g_modulus: [f64; 3],
    pub violations: Vec<AuditViolation>,
}

impl BasicConditionsReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

const AUDIT_SCALES: [f64; 3] = [1e-2, 1e-4, 1e-6];

/// Sampling audit of the hybrid basic conditions over `region`.
pub fn audit_basic_conditions<S: Scalar>(
    h: &HybridSystem<S>,
    region: &BoxRegion<S>,
    samples: usize,
    seed: u64,
) -> Result<BasicConditionsReport, SystemError> {
    if region.lo.len() != h.state_dim {
        return Err(SystemError::Dimension {
            what: "audit box".into(),
            expected: h.state_dim,
            found: region.lo.len(),
        });
    }
    let tol: S = lit(1e-9);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = Vec::new();
    let mut in_d = 0;
    let mut pairs: Vec<(Vec<S>, Vec<S>)> = Vec::with_capacity(samples.max(1));
    for _ in 0..samples.max(1) {
        let x = region.sample(&mut rng);
        let dir = unit_direction(h.state_dim, &mut rng);
        let fx = h.flow_map(&x);
        if !vec::is_finite(&fx) {
            violations.push(AuditViolation::NonFiniteFlow { x: to_vec64(&x) });
        }
        let gx = h.jump_map(&x);
        if !vec::is_finite(&gx) {
            violations.push(AuditViolation::NonFiniteJump { x: to_vec64(&x) });
        }
        if h.m_d(&x) <= tol {
            in_d += 1;
            if vec::is_finite(&gx) && !(h.m_c(&gx) <= tol || h.m_d(&gx) <= tol) {
                violations.push(AuditViolation::JumpLeavesDomain {
                    x: to_vec64(&x),
                    gx: to_vec64(&gx),
                });
            }
        }
        pairs.push((x, dir));
    }
    let f_modulus = lipschitz_profile(&pairs, &*h.f);
    let g_modulus = lipschitz_profile(&pairs, &*h.g);
    for (map, m) in [("f", f_modulus), ("g", g_modulus)] {
        if diverges(m) {
            violations.push(AuditViolation::Discontinuous { map, modulus: m });
        }
    }
    Ok(BasicConditionsReport {
        sets_closed_structurally: true,
        samples: samples.max(1),
        samples_in_d: in_d,
        f_modulus,
        g_modulus,
        violations,
    })
}

fn to_vec64<S: Scalar>(x: &[S]) -> Vec<f64> {
    x.iter().map(|&v| to_f64(v)).collect()
}

fn unit_direction<S: Scalar>(n: usize, rng: &mut impl Rng) -> Vec<S> {
    loop {
        let d: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-3 {
            return d.iter().map(|v| lit(v / norm)).collect();
        }
    }
}

/// Difference-quotient moduli at the three audit scales. The worst pairs at
/// the coarse scale are bisected toward the largest change, so a jump
/// discontinuity shows up as a modulus growing like 1/h.
fn lipschitz_profile<S: Scalar>(
    pairs: &[(Vec<S>, Vec<S>)],
    map: &(dyn Fn(&[S]) -> Vec<S> + Send + Sync),
) -> [f64; 3] {
    let h0: S = lit(AUDIT_SCALES[0]);
    let ratio = |p: &[S], q: &[S], len: S| -> f64 {
        let d = vec::dist(&map(p), &map(q));
        if d.is_finite() {
            to_f64(d / len)
        } else {
            f64::INFINITY
        }
    };
    let mut coarse: Vec<(f64, Vec<S>, Vec<S>)> = pairs
        .iter()
        .map(|(x, u)| {
            let y: Vec<S> = x.iter().zip(u).map(|(&a, &b)| a + h0 * b).collect();
            (ratio(x, &y, h0), x.clone(), y)
        })
        .collect();
    let mut out = [0.0; 3];
    out[0] = coarse.iter().map(|c| c.0).fold(0.0, f64::max);
    coarse.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
    for (_, p0, q0) in coarse.iter().take(16) {
        let (mut p, mut q) = (p0.clone(), q0.clone());
        let mut len = h0;
        let fine = [lit::<S>(AUDIT_SCALES[1]), lit::<S>(AUDIT_SCALES[2])];
        for (slot, &target) in fine.iter().enumerate() {
            while len > target {
                let m: Vec<S> = p
                    .iter()
                    .zip(&q)
                    .map(|(&a, &b)| (a + b) * lit(0.5))
                    .collect();
                let fm = map(&m);
                let left = vec::dist(&map(&p), &fm);
                let right = vec::dist(&fm, &map(&q));
                if left >= right {
                    q = m;
                } else {
                    p = m;
                }
                len = len * lit(0.5);
            }
            out[slot + 1] = out[slot + 1].max(ratio(&p, &q, len));
        }
    }
    out
}

fn diverges(m: [f64; 3]) -> bool {
    !m[2].is_finite() || m[2] > 100.0 * m[0].max(1.0)
}

/// Classification of a point for the basic uniqueness conditions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum UniquenessClass {
    /// In C \ D: a viable flow must exist and be unique.
    FlowOnly { viable: bool, flows_agree: bool },
    /// In C ∩ D: no viable flow may exist.
    Both { viable: bool },
    /// In D \ C: the condition is vacuous.
    JumpOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniquenessPoint {
    pub x: Vec<f64>,
    pub class: UniquenessClass,
    pub holds: bool,
}

pub fn check_uniqueness_conditions<S: Scalar>(
    h: &HybridSystem<S>,
    points: &[Vec<S>],
    horizon: S,
    cfg: &SolverConfig,
) -> Result<Vec<UniquenessPoint>, SystemError> {
    let tol: S = lit(cfg.tol_set);
    let mut out = Vec::with_capacity(points.len());
    for (index, x) in points.iter().enumerate() {
        if x.len() != h.state_dim {
            return Err(SystemError::Dimension {
                what: format!("point #{index}"),
                expected: h.state_dim,
                found: x.len(),
            });
        }
        let in_c = h.in_c(x, tol);
        let in_d = h.in_d(x, tol);
        let class = match (in_c, in_d) {
            (false, false) => return Err(SystemError::PointOutside { index }),
            (false, true) => UniquenessClass::JumpOnly,
            (true, true) => UniquenessClass::Both {
                viable: viability_in_c(h, S::zero(), 0, x, cfg)?,
            },
            (true, false) => {
                let viable = viability_in_c(h, S::zero(), 0, x, cfg)?;
                UniquenessClass::FlowOnly {
                    viable,
                    flows_agree: viable && flows_agree(h, x, horizon, cfg)?,
                }
            }
        };
        let holds = match class {
            UniquenessClass::FlowOnly {
                viable,
                flows_agree,
            } => viable && flows_agree,
            UniquenessClass::Both { viable } => !viable,
            UniquenessClass::JumpOnly => true,
        };
        out.push(UniquenessPoint {
            x: to_vec64(x),
            class,
            holds,
        });
    }
    Ok(out)
}

/// Integrates twice with tolerances a factor 100 apart and compares the
/// common part of the two flows.
fn flows_agree<S: Scalar>(
    h: &HybridSystem<S>,
    x: &[S],
    horizon: S,
    cfg: &SolverConfig,
) -> Result<bool, SimError> {
    let opts = FlowOptions::new(horizon, JumpEntry::Ignore);
    let a = integrate_flow_with(h, x, S::zero(), 0, cfg, &opts)?;
    let loose = SolverConfig {
        rel_tol: cfg.rel_tol * 100.0,
        abs_tol: cfg.abs_tol * 100.0,
        ..cfg.clone()
    };
    let b = integrate_flow_with(h, x, S::zero(), 0, &loose, &opts)?;
    let t_end = a.t_end().min(b.t_end());
    let ea = sample_flow(&a, t_end);
    let eb = sample_flow(&b, t_end);
    let scale = S::one() + vec::max_abs(&ea).max(vec::max_abs(&eb));
    Ok(vec::dist(&ea, &eb) <= lit::<S>(1e-6) * scale)
}

fn sample_flow<S: Scalar>(r: &crate::sim::FlowResult<S>, t: S) -> Vec<S> {
    let k = r.times.partition_point(|&s| s <= t).saturating_sub(1);
    if r.times[k] == t || k + 1 == r.times.len() {
        return r.states[k].clone();
    }
    let h = r.times[k + 1] - r.times[k];
    crate::arc::hermite(
        &r.states[k],
        &r.derivs[k],
        &r.states[k + 1],
        &r.derivs[k + 1],
        h,
        (t - r.times[k]) / h,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> HybridSystem<f64> {
        // bouncing-ball-like: C = {x0 >= 0}, D = {x0 <= 0, x1 <= 0}
        let m_c = MarginFunction::affine(vec![-1.0, 0.0], 0.0);
        let m_d = MarginFunction::max_of(vec![
            MarginFunction::affine(vec![1.0, 0.0], 0.0),
            MarginFunction::affine(vec![0.0, 1.0], 0.0),
        ]);
        HybridSystem::new(
            "toy",
            2,
            m_c,
            |x: &[f64]| vec![x[1], -1.0],
            m_d,
            |x: &[f64]| vec![-x[0], -0.5 * x[1]],
        )
    }

    #[test]
    fn margin_combinators() {
        let h = toy();
        assert!(h.in_c(&[1.0, 0.0], 1e-9));
        assert!(!h.in_c(&[-1.0, 0.0], 1e-9));
        assert!(h.in_d(&[0.0, -1.0], 1e-9));
        assert!(!h.in_d(&[0.0, 1.0], 1e-9));
        let neg = h.flow_set.margin.negate();
        assert_eq!(neg.eval(&[2.0, 0.0]), 2.0);
        assert_eq!(
            MarginFunction::<f64>::min_of(vec![
                MarginFunction::empty(),
                MarginFunction::everywhere()
            ])
            .eval(&[]),
            -1.0
        );
    }

    #[test]
    fn closed_loop_holds_plant_state_on_jumps() {
        let spec = ControlLoopSpec {
            name: "hold".into(),
            n_p: 2,
            n_c: 1,
            n_r: 1,
            f_p: Arc::new(|_xp: &[f64], _u: &[f64]| vec![0.0, 0.0]),
            m_c: MarginFunction::everywhere(),
            f_c: Arc::new(|_x: &[f64]| vec![1.0]),
            m_d: MarginFunction::everywhere(),
            g_c: Arc::new(|x: &[f64]| vec![x[2] * 2.0]),
            k_c: Arc::new(|x: &[f64]| vec![x[2]]),
        };
        let h = build_closed_loop(&spec).unwrap();
        let x = [0.3, -0.7, 1.5];
        assert_eq!(h.jump_map(&x), vec![0.3, -0.7, 3.0]);
        assert_eq!(h.flow_map(&x), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn closed_loop_rejects_inconsistent_dimensions() {
        let spec = ControlLoopSpec {
            name: "bad".into(),
            n_p: 1,
            n_c: 1,
            n_r: 1,
            f_p: Arc::new(|_xp: &[f64], _u: &[f64]| vec![0.0, 0.0]),
            m_c: MarginFunction::everywhere(),
            f_c: Arc::new(|_x: &[f64]| vec![1.0]),
            m_d: MarginFunction::empty(),
            g_c: Arc::new(|_x: &[f64]| vec![0.0]),
            k_c: Arc::new(|_x: &[f64]| vec![0.0]),
        };
        assert!(matches!(
            build_closed_loop(&spec),
            Err(SystemError::Dimension { .. })
        ));
    }

    #[test]
    fn audit_flags_discontinuous_jump_map() {
        let mut h = toy();
        h.g = Arc::new(|x: &[f64]| vec![if x[0] > 0.1 { 1.0 } else { 0.0 }, 0.0]);
        let r = audit_basic_conditions(&h, &BoxRegion::cube(2, 1.0), 2000, 7).unwrap();
        assert!(r
            .violations
            .iter()
            .any(|v| matches!(v, AuditViolation::Discontinuous { map: "g", .. })));
        let clean = audit_basic_conditions(&toy(), &BoxRegion::cube(2, 1.0), 2000, 7).unwrap();
        assert!(clean.passed(), "{:?}", clean.violations);
        assert!((clean.g_modulus[2] - clean.g_modulus[0]).abs() < 0.6);
    }

    #[test]
    fn linear_map_multiplies() {
        let m = linear_map(vec![vec![0.0, 1.0], vec![-1.0, 0.0]]);
        assert_eq!(m(&[2.0, 3.0]), vec![3.0, -2.0]);
    }
}
