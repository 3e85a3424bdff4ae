//! Admissible perturbation signals and the perturbed system
//!
//! ```text
//! ẋ  = f(x + e1) + e2   while x + e1 ∈ C
//! x⁺ = g(x + e1) + e3   when  x + e1 ∈ D,      e_i = δ n_i,  |n_i| <= 1
//! ```

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::scalar::{lit, to_f64, vec, Scalar};
use crate::sim::{HybridDynamics, Side, SimError};
use crate::system::{ControlLoopSpec, HybridSystem};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PerturbationError {
    #[error("impulse value {norm} on channel n{channel} exceeds the unit bound")]
    Bound { channel: usize, norm: f64 },
    #[error("channel must be 1, 2 or 3 (got {0})")]
    Channel(usize),
    #[error("{what}: expected dimension {expected}, found {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("scale must be non-negative and finite (got {0})")]
    Scale(f64),
}

/// The triple `(n1, n2, n3)` at one hybrid time.
pub type Triple<S> = [Vec<S>; 3];

pub type TimeSignalFn<S> = Arc<dyn Fn(S) -> Triple<S> + Send + Sync>;
pub type HybridSignalFn<S> = Arc<dyn Fn(S, usize) -> Triple<S> + Send + Sync>;
pub type StateSignalFn<S> = Arc<dyn Fn(S, usize, &[S]) -> Triple<S> + Send + Sync>;

/// A signal value at one hybrid instant on one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Impulse<S> {
    pub t: S,
    pub j: usize,
    /// 1, 2 or 3.
    pub channel: usize,
    pub value: Vec<S>,
}

#[derive(Clone)]
pub enum SignalKind<S> {
    Zero,
    /// Ignores `j`.
    Time(TimeSignalFn<S>),
    Hybrid(HybridSignalFn<S>),
    /// Nonzero only at the listed hybrid instants.
    Impulse(Vec<Impulse<S>>),
    /// Depends on the current state (control-loop noise embedding).
    StateAware(StateSignalFn<S>),
}

#[derive(Clone)]
pub struct PerturbationSignal<S> {
    pub id: String,
    pub dim: usize,
    pub kind: SignalKind<S>,
    /// Window for matching impulse times.
    pub impulse_tol: S,
}

impl<S: fmt::Debug> fmt::Debug for PerturbationSignal<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match &self.kind {
            SignalKind::Zero => "zero".to_string(),
            SignalKind::Time(_) => "time".to_string(),
            SignalKind::Hybrid(_) => "hybrid-time".to_string(),
            SignalKind::Impulse(p) => format!("impulse({} points)", p.len()),
            SignalKind::StateAware(_) => "state-aware".to_string(),
        };
        write!(
            f,
            "PerturbationSignal({}, n = {}, {kind})",
            self.id, self.dim
        )
    }
}

const BOUND_SLACK: f64 = 1e-12;

impl<S: Scalar> PerturbationSignal<S> {
    pub fn zero(dim: usize) -> Self {
        Self {
            id: "zero".into(),
            dim,
            kind: SignalKind::Zero,
            impulse_tol: lit(1e-9),
        }
    }

    pub fn is_zero(&self) -> bool {
        match &self.kind {
            SignalKind::Zero => true,
            SignalKind::Impulse(p) => p.is_empty(),
            _ => false,
        }
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    /// Impulse instants, which the integrator must land on.
    pub fn impulse_times(&self) -> Vec<S> {
        match &self.kind {
            SignalKind::Impulse(p) => p.iter().map(|i| i.t).collect(),
            _ => Vec::new(),
        }
    }

    /// `(n1, n2, n3)` at `(t, j)`; impulses only count at nodes. Every
    /// evaluation is checked against the unit bound.
    pub fn eval(&self, t: S, j: usize, x: &[S], side: Side) -> Result<Triple<S>, SimError> {
        let zero = || vec![S::zero(); self.dim];
        let n = match &self.kind {
            SignalKind::Zero => [zero(), zero(), zero()],
            SignalKind::Time(f) => f(t),
            SignalKind::Hybrid(f) => f(t, j),
            SignalKind::StateAware(f) => f(t, j, x),
            SignalKind::Impulse(points) => {
                let mut n = [zero(), zero(), zero()];
                if side == Side::Node {
                    for p in points {
                        if p.j == j && (p.t - t).abs() <= self.impulse_tol {
                            n[p.channel - 1] = p.value.clone();
                        }
                    }
                }
                n
            }
        };
        for (i, ni) in n.iter().enumerate() {
            if ni.len() != self.dim {
                return Err(SimError::Dimension {
                    expected: self.dim,
                    found: ni.len(),
                });
            }
            let norm = vec::norm(ni);
            if !(norm <= S::one() + lit(BOUND_SLACK)) {
                return Err(SimError::SignalBound {
                    channel: i + 1,
                    t: to_f64(t),
                    j,
                    norm: to_f64(norm),
                });
            }
        }
        Ok(n)
    }
}

/// Hybrid-time signal constant across `j`.
pub fn make_time_signal<S: Scalar>(
    id: impl Into<String>,
    dim: usize,
    f: impl Fn(S) -> Triple<S> + Send + Sync + 'static,
) -> PerturbationSignal<S> {
    PerturbationSignal {
        id: id.into(),
        dim,
        kind: SignalKind::Time(Arc::new(f)),
        impulse_tol: lit(1e-9),
    }
}

/// Signal equal to the listed values at the listed hybrid instants.
pub fn make_impulse_signal<S: Scalar>(
    id: impl Into<String>,
    dim: usize,
    points: Vec<Impulse<S>>,
) -> Result<PerturbationSignal<S>, PerturbationError> {
    for p in &points {
        if !(1..=3).contains(&p.channel) {
            return Err(PerturbationError::Channel(p.channel));
        }
        if p.value.len() != dim {
            return Err(PerturbationError::Dimension {
                what: "impulse value",
                expected: dim,
                found: p.value.len(),
            });
        }
        let norm = vec::norm(&p.value);
        if !(norm <= S::one() + lit(BOUND_SLACK)) {
            return Err(PerturbationError::Bound {
                channel: p.channel,
                norm: to_f64(norm),
            });
        }
    }
    Ok(PerturbationSignal {
        id: id.into(),
        dim,
        kind: SignalKind::Impulse(points),
        impulse_tol: lit(1e-9),
    })
}

pub type ChannelFn<S> = Arc<dyn Fn(S) -> Vec<S> + Send + Sync>;

/// Measurement noise `d1` on the plant output and actuator disturbance `d2`,
/// expressed as a perturbation of the closed loop:
///
/// ```text
/// e1 = (δ d1, 0)
/// e2 = (f_p(x_p, k_c(x_p + δ d1, x_c) + δ d2) - f_p(x_p + δ d1, k_c(x_p + δ d1, x_c)), 0)
/// e3 = -(δ d1, 0)
/// ```
///
/// `e2` depends on the state. The returned signal is `n_i = e_i / (δ·gain)`
/// with scale `δ·gain`; choose `gain` so that `|n2| <= 1` (it is 1 when
/// `f_p` is 1-Lipschitz in `x_p` and `u`).
pub fn embed_control_noise<S: Scalar>(
    spec: &ControlLoopSpec<S>,
    d1: ChannelFn<S>,
    d2: ChannelFn<S>,
    delta: S,
    gain: S,
) -> Result<(PerturbationSignal<S>, S), PerturbationError> {
    let (n_p, n_c, n_r) = (spec.n_p, spec.n_c, spec.n_r);
    let probe_d1 = d1(S::zero());
    if probe_d1.len() != n_p {
        return Err(PerturbationError::Dimension {
            what: "d1",
            expected: n_p,
            found: probe_d1.len(),
        });
    }
    let probe_d2 = d2(S::zero());
    if probe_d2.len() != n_r {
        return Err(PerturbationError::Dimension {
            what: "d2",
            expected: n_r,
            found: probe_d2.len(),
        });
    }
    if !(delta >= S::zero()) || !delta.is_finite() {
        return Err(PerturbationError::Scale(to_f64(delta)));
    }
    if !(gain > S::zero()) || !gain.is_finite() {
        return Err(PerturbationError::Scale(to_f64(gain)));
    }
    let scale = delta * gain;
    let f_p = spec.f_p.clone();
    let k_c = spec.k_c.clone();
    let f = move |t: S, _j: usize, x: &[S]| -> Triple<S> {
        let n = n_p + n_c;
        if scale == S::zero() {
            return [vec![S::zero(); n], vec![S::zero(); n], vec![S::zero(); n]];
        }
        let a = d1(t);
        let b = d2(t);
        let xp = &x[..n_p];
        let xp_meas: Vec<S> = xp.iter().zip(&a).map(|(&p, &q)| p + delta * q).collect();
        let mut x_meas = xp_meas.clone();
        x_meas.extend_from_slice(&x[n_p..]);
        let u_meas = k_c(&x_meas);
        let u_act: Vec<S> = u_meas
            .iter()
            .zip(&b)
            .map(|(&u, &d)| u + delta * d)
            .collect();
        let lhs = f_p(xp, &u_act);
        let rhs = f_p(&xp_meas, &u_meas);
        let mut e1: Vec<S> = a.iter().map(|&v| delta * v / scale).collect();
        e1.resize(n, S::zero());
        let mut e2: Vec<S> = lhs
            .iter()
            .zip(&rhs)
            .map(|(&p, &q)| (p - q) / scale)
            .collect();
        e2.resize(n, S::zero());
        let e3: Vec<S> = e1.iter().map(|&v| -v).collect();
        [e1, e2, e3]
    };
    Ok((
        PerturbationSignal {
            id: "embedded".into(),
            dim: n_p + n_c,
            kind: SignalKind::StateAware(Arc::new(f)),
            impulse_tol: lit(1e-9),
        },
        scale,
    ))
}

/// `H_{δn}` built on a nominal system.
#[derive(Clone, Debug)]
pub struct PerturbedSystem<S> {
    pub base: HybridSystem<S>,
    pub signal: PerturbationSignal<S>,
    pub delta: S,
    name: String,
}

impl<S: Scalar> PerturbedSystem<S> {
    pub fn new(
        base: HybridSystem<S>,
        signal: PerturbationSignal<S>,
        delta: S,
    ) -> Result<Self, PerturbationError> {
        if signal.dim != base.state_dim {
            return Err(PerturbationError::Dimension {
                what: "signal",
                expected: base.state_dim,
                found: signal.dim,
            });
        }
        if !(delta >= S::zero()) || !delta.is_finite() {
            return Err(PerturbationError::Scale(to_f64(delta)));
        }
        let name = format!("{}[{}, δ={}]", base.name, signal.id, delta);
        Ok(Self {
            base,
            signal,
            delta,
            name,
        })
    }

    /// `(e1, e2, e3) = δ n(t, j)`.
    pub fn offsets(&self, t: S, j: usize, x: &[S], side: Side) -> Result<Triple<S>, SimError> {
        let [a, b, c] = self.signal.eval(t, j, x, side)?;
        let d = self.delta;
        Ok([vec::scale(&a, d), vec::scale(&b, d), vec::scale(&c, d)])
    }

    /// `x + e1`, the state as seen by the sets and maps.
    pub fn measured(&self, t: S, j: usize, x: &[S], side: Side) -> Result<Vec<S>, SimError> {
        let [e1, _, _] = self.offsets(t, j, x, side)?;
        Ok(vec::add_sparse(x, &e1))
    }
}

impl<S: Scalar> HybridDynamics<S> for PerturbedSystem<S> {
    fn name(&self) -> &str {
        &self.name
    }

    fn state_dim(&self) -> usize {
        self.base.state_dim
    }

    fn flow(&self, t: S, j: usize, x: &[S]) -> Result<Vec<S>, SimError> {
        let [e1, e2, _] = self.offsets(t, j, x, Side::Flow)?;
        let f = self.base.flow(t, j, &vec::add_sparse(x, &e1))?;
        Ok(vec::add_sparse(&f, &e2))
    }

    fn jump(&self, t: S, j: usize, x: &[S]) -> Result<Vec<S>, SimError> {
        let [e1, _, e3] = self.offsets(t, j, x, Side::Node)?;
        let g = self.base.jump(t, j, &vec::add_sparse(x, &e1))?;
        Ok(vec::add_sparse(&g, &e3))
    }

    fn flow_margin(&self, t: S, j: usize, x: &[S], side: Side) -> Result<S, SimError> {
        Ok(self.base.m_c(&self.measured(t, j, x, side)?))
    }

    fn jump_margin(&self, t: S, j: usize, x: &[S], side: Side) -> Result<S, SimError> {
        Ok(self.base.m_d(&self.measured(t, j, x, side)?))
    }

    fn in_flow_set(&self, t: S, j: usize, x: &[S], tol: S, side: Side) -> Result<bool, SimError> {
        Ok(self.base.in_c(&self.measured(t, j, x, side)?, tol))
    }

    fn in_jump_set(&self, t: S, j: usize, x: &[S], tol: S, side: Side) -> Result<bool, SimError> {
        Ok(self.base.in_d(&self.measured(t, j, x, side)?, tol))
    }

    fn viability_override(&self, t: S, j: usize, x: &[S]) -> Option<bool> {
        if self.signal.is_zero() || self.delta == S::zero() {
            self.base.viability_override(t, j, x)
        } else {
            None
        }
    }

    fn mandatory_stops(&self) -> Vec<S> {
        if self.delta == S::zero() {
            return Vec::new();
        }
        self.signal.impulse_times()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::MarginFunction;

    fn line() -> HybridSystem<f64> {
        HybridSystem::new(
            "line",
            2,
            MarginFunction::everywhere(),
            |_x: &[f64]| vec![1.0, 0.0],
            MarginFunction::affine(vec![0.0, -1.0], 1.5),
            |x: &[f64]| vec![x[0], 0.0],
        )
    }

    #[test]
    fn impulse_matches_node_and_level_only() {
        let s = make_impulse_signal(
            "kick",
            2,
            vec![Impulse {
                t: 1.0,
                j: 0,
                channel: 1,
                value: vec![0.0, 1.0],
            }],
        )
        .unwrap();
        assert_eq!(
            s.eval(1.0, 0, &[0.0, 0.0], Side::Node).unwrap()[0],
            vec![0.0, 1.0]
        );
        assert_eq!(
            s.eval(1.0 + 5e-10, 0, &[0.0, 0.0], Side::Node).unwrap()[0],
            vec![0.0, 1.0]
        );
        assert_eq!(
            s.eval(1.0, 0, &[0.0, 0.0], Side::Flow).unwrap()[0],
            vec![0.0, 0.0]
        );
        assert_eq!(
            s.eval(1.0, 1, &[0.0, 0.0], Side::Node).unwrap()[0],
            vec![0.0, 0.0]
        );
        assert_eq!(s.impulse_times(), vec![1.0]);
    }

    #[test]
    fn impulse_bound_is_checked_at_construction() {
        let r = make_impulse_signal(
            "big",
            2,
            vec![Impulse {
                t: 0.0,
                j: 0,
                channel: 2,
                value: vec![1.0, 1.0],
            }],
        );
        assert!(matches!(
            r,
            Err(PerturbationError::Bound { channel: 2, .. })
        ));
        assert!(make_impulse_signal::<f64>("none", 2, vec![])
            .unwrap()
            .is_zero());
    }

    #[test]
    fn time_signal_bound_is_asserted_at_evaluation() {
        let s = make_time_signal("grow", 1, |t: f64| [vec![t], vec![0.0], vec![0.0]]);
        assert!(s.eval(0.5, 3, &[0.0], Side::Flow).is_ok());
        let err = s.eval(1.5, 0, &[0.0], Side::Flow).unwrap_err();
        assert!(matches!(err, SimError::SignalBound { channel: 1, .. }));
    }

    #[test]
    fn perturbed_maps_follow_measured_state() {
        let sig = make_time_signal("c", 2, |_t: f64| {
            [vec![0.0, 1.0], vec![0.5, 0.0], vec![0.0, -1.0]]
        });
        let p = PerturbedSystem::new(line(), sig, 0.5).unwrap();
        // measured x2 = 1 + 0.5 > 1.5 - tol  => in D
        assert!(p
            .in_jump_set(0.0, 0, &[0.0, 1.0], 1e-9, Side::Node)
            .unwrap());
        assert!(!line().in_d(&[0.0, 1.0], 1e-9));
        assert_eq!(p.flow(0.0, 0, &[0.0, 1.0]).unwrap(), vec![1.25, 0.0]);
        assert_eq!(p.jump(0.0, 0, &[2.0, 1.0]).unwrap(), vec![2.0, -0.5]);
    }

    #[test]
    fn zero_signal_is_bitwise_identity() {
        let p = PerturbedSystem::new(line(), PerturbationSignal::zero(2), 0.3).unwrap();
        let x = [-0.0, 1.25];
        let m = p.measured(0.7, 0, &x, Side::Flow).unwrap();
        assert!(m[0].is_sign_negative());
        assert_eq!(p.flow(0.7, 0, &x).unwrap(), line().flow_map(&x));
    }

    #[test]
    fn embedding_of_linear_plant_is_state_independent() {
        // f_p(x_p, u) = A_p x_p + B u with A_p = [[0, 1], [-2, -3]]
        let spec = ControlLoopSpec {
            name: "lin".into(),
            n_p: 2,
            n_c: 1,
            n_r: 1,
            f_p: Arc::new(|xp: &[f64], u: &[f64]| vec![xp[1], -2.0 * xp[0] - 3.0 * xp[1] + u[0]]),
            m_c: MarginFunction::everywhere(),
            f_c: Arc::new(|_x: &[f64]| vec![0.0]),
            m_d: MarginFunction::empty(),
            g_c: Arc::new(|x: &[f64]| vec![x[2]]),
            k_c: Arc::new(|x: &[f64]| vec![x[2]]),
        };
        let d1 = Arc::new(|_t: f64| vec![0.1, -0.2]) as ChannelFn<f64>;
        let d2 = Arc::new(|_t: f64| vec![0.0]) as ChannelFn<f64>;
        let (sig, scale) = embed_control_noise(&spec, d1, d2, 0.5, 4.0).unwrap();
        assert_eq!(scale, 2.0);
        let at = |x: &[f64]| sig.eval(0.0, 0, x, Side::Flow).unwrap();
        let a = at(&[1.0, 2.0, 3.0]);
        let b = at(&[-4.0, 0.5, 9.0]);
        for (p, q) in a[1].iter().zip(&b[1]) {
            assert!((p - q).abs() < 1e-12);
        }
        // e2 = -A_p δ d1, scaled by 1/(δ·gain)
        let e2: Vec<f64> = a[1].iter().map(|v| v * scale).collect();
        let want = [-(0.5 * -0.2), -(-2.0 * 0.05 - 3.0 * -0.1)];
        assert!(
            (e2[0] - want[0]).abs() < 1e-12 && (e2[1] - want[1]).abs() < 1e-12,
            "{e2:?}"
        );
        assert_eq!(a[2][0], -a[0][0]);
    }
}
