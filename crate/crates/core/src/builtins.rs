//! Built-in systems and signals: the planar corner example and the FORE
//! reset control loop.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::Serialize;

use crate::perturbation::{make_impulse_signal, make_time_signal, Impulse, PerturbationSignal};
use crate::scalar::{lit, Scalar};
use crate::system::{build_closed_loop, ControlLoopSpec, HybridSystem, MarginFunction};

pub const PLANAR_ID: &str = "planar-ex32";
pub const FORE_ID: &str = "fore-ex33";

/// FORE parameters: sector slope ε, dwell time ρ, reset pole λ.
pub const FORE_EPS: f64 = 0.1;
pub const FORE_RHO: f64 = 0.1;
pub const FORE_LAMBDA: f64 = 1.0;

const SET_TOL: f64 = 1e-9;

/// ẋ = (1, 0) on C = cl(ℝ² \ D), x⁺ = (0, 0) on D = {x₂ >= |x₁| + 1}.
pub fn planar<S: Scalar>() -> HybridSystem<S> {
    let one = S::one();
    let m_d = MarginFunction::new("max(x1 - x2 + 1, -x1 - x2 + 1)", move |x: &[S]| {
        (x[0] - x[1] + one).max(-x[0] - x[1] + one)
    });
    let m_c = m_d.negate();
    let tol: S = lit(SET_TOL);
    let m_c_ov = m_c.clone();
    HybridSystem::new(
        PLANAR_ID,
        2,
        m_c,
        |_x: &[S]| vec![S::one(), S::zero()],
        m_d,
        |_x: &[S]| vec![S::zero(), S::zero()],
    )
    // moving right, C is left only through the left edge of D (x₁ < 0);
    // the corner (0, 1) flows on along x₂ = 1
    .with_viability_override(move |x: &[S]| {
        let r = x[0] - x[1] + S::one();
        let l = -x[0] - x[1] + S::one();
        m_c_ov.eval(x) <= tol && !(r < -tol && l <= tol)
    })
}

/// Initial state of the planar experiments.
pub fn planar_xi<S: Scalar>() -> Vec<S> {
    vec![-S::one(), S::one()]
}

/// Points whose nominal solution grazes the corner or slides along the right
/// edge of D: `{x₁ >= 0, x₂ = x₁ + 1} ∪ {x₁ <= 0, x₂ = 1}`.
pub fn planar_grazing_set<S: Scalar>(x: &[S], tol: S) -> bool {
    let (a, b) = (x[0], x[1]);
    (a >= -tol && (b - a - S::one()).abs() <= tol) || (a <= tol && (b - S::one()).abs() <= tol)
}

/// Plant P(s) = (s + 1) / (s (s + 0.2)) with FORE `ẋ_r = -λ x_r + v`,
/// `v = -x₂`, `u = x_r`, and a dwell-time clock τ. State `(x1, x2, x_r, τ)`.
pub fn fore_spec<S: Scalar>() -> ControlLoopSpec<S> {
    let eps: S = lit(FORE_EPS);
    let rho: S = lit(FORE_RHO);
    let lambda: S = lit(FORE_LAMBDA);
    let two: S = lit(2.0);
    let sector = move |x: &[S]| eps * x[1] * x[1] - two * x[1] * x[2];
    ControlLoopSpec {
        name: FORE_ID.into(),
        n_p: 2,
        n_c: 2,
        n_r: 1,
        f_p: Arc::new(|xp: &[S], u: &[S]| vec![u[0], xp[0] - lit::<S>(0.2) * xp[1] + u[0]]),
        m_c: MarginFunction::new("min(-(eps x2^2 - 2 x2 xr), tau - rho)", move |x: &[S]| {
            (-sector(x)).min(x[3] - rho)
        }),
        f_c: Arc::new(move |x: &[S]| vec![-lambda * x[2] - x[1], S::one()]),
        m_d: MarginFunction::new("max(eps x2^2 - 2 x2 xr, rho - tau)", move |x: &[S]| {
            sector(x).max(rho - x[3])
        }),
        g_c: Arc::new(|_x: &[S]| vec![S::zero(), S::zero()]),
        k_c: Arc::new(|x: &[S]| vec![x[2]]),
    }
}

/// Flow matrix of `(x1, x2, x_r)`.
pub fn fore_a<S: Scalar>() -> [[S; 3]; 3] {
    let o = S::zero();
    let one = S::one();
    let lambda: S = lit(FORE_LAMBDA);
    [[o, o, one], [one, lit(-0.2), one], [o, -one, -lambda]]
}

pub fn fore<S: Scalar>() -> HybridSystem<S> {
    let h = build_closed_loop(&fore_spec()).expect("FORE spec is dimensionally consistent");
    let rho: S = lit(FORE_RHO);
    let tol: S = lit(SET_TOL);
    let qs = sector_derivative_forms::<S>(6);
    h.with_viability_override(move |x: &[S]| {
        if x[3] < rho - tol {
            return true;
        }
        // the sector form s(x) = xᵀ Q₀ x stays >= 0 along e^{At}x iff its
        // first non-vanishing time derivative is positive
        let xs = [x[0], x[1], x[2]];
        let scale = S::one() + xs.iter().map(|&v| v * v).sum::<S>();
        for q in &qs {
            let v = quad(q, &xs);
            let theta = lit::<S>(1e-9) * scale * frobenius(q);
            if v > theta {
                return true;
            }
            if v < -theta {
                return false;
            }
        }
        true
    })
}

/// Q₀ and `Q_{k+1} = AᵀQ_k + Q_k A` for the FORE sector form.
fn sector_derivative_forms<S: Scalar>(order: usize) -> Vec<[[S; 3]; 3]> {
    let eps: S = lit(FORE_EPS);
    let o = S::zero();
    let a = fore_a::<S>();
    let mut q = [[o, o, o], [o, eps, -S::one()], [o, -S::one(), o]];
    let mut out = vec![q];
    for _ in 0..order {
        let mut n = [[o; 3]; 3];
        for (r, row) in n.iter_mut().enumerate() {
            for (c, cell) in row.iter_mut().enumerate() {
                let mut acc = o;
                for k in 0..3 {
                    acc = acc + a[k][r] * q[k][c] + q[r][k] * a[k][c];
                }
                *cell = acc;
            }
        }
        q = n;
        out.push(q);
    }
    out
}

fn quad<S: Scalar>(q: &[[S; 3]; 3], x: &[S; 3]) -> S {
    let mut acc = S::zero();
    for r in 0..3 {
        for c in 0..3 {
            acc = acc + x[r] * q[r][c] * x[c];
        }
    }
    acc
}

fn frobenius<S: Scalar>(q: &[[S; 3]; 3]) -> S {
    q.iter().flatten().map(|&v| v * v).sum::<S>().sqrt()
}

pub fn fore_xi<S: Scalar>() -> Vec<S> {
    vec![S::one(), S::zero(), -S::one(), S::zero()]
}

/// Perturbed start `(1, δ, -1, 0)`.
pub fn fore_xi_perturbed<S: Scalar>(delta: S) -> Vec<S> {
    vec![S::one(), delta, -S::one(), S::zero()]
}

/// Scalar noise `n` on x₂ lifted to `((0,n,0,0), (0,0.2n,0,0), (0,-n,0,0))`.
pub fn fore_noise_lift<S: Scalar>(
    id: &str,
    n: impl Fn(S) -> S + Send + Sync + 'static,
) -> PerturbationSignal<S> {
    make_time_signal(id, 4, move |t: S| {
        let v = n(t);
        let o = S::zero();
        [
            vec![o, v, o, o],
            vec![o, lit::<S>(0.2) * v, o, o],
            vec![o, -v, o, o],
        ]
    })
}

/// `n_a(t) = e^{-t} cos(10πt)`.
pub fn signal_na<S: Scalar>() -> PerturbationSignal<S> {
    fore_noise_lift("na", |t: S| {
        (-t).exp() * (lit::<S>(10.0) * S::PI() * t).cos()
    })
}

/// `n_b(t) = cos(10πt)`.
pub fn signal_nb<S: Scalar>() -> PerturbationSignal<S> {
    fore_noise_lift("nb", |t: S| (lit::<S>(10.0) * S::PI() * t).cos())
}

fn planar_kick<S: Scalar>(id: &str, dx2: S) -> PerturbationSignal<S> {
    make_impulse_signal(
        id,
        2,
        vec![Impulse {
            t: S::one(),
            j: 0,
            channel: 1,
            value: vec![S::zero(), dx2],
        }],
    )
    .expect("unit impulse")
}

/// `n1a(1, 0) = (0, 1)`, zero elsewhere: measured state pushed into D at t = 1.
pub fn signal_n1a<S: Scalar>() -> PerturbationSignal<S> {
    planar_kick("n1a", S::one())
}

/// `n1b(1, 0) = (0, -1)`: measured state pushed off D at t = 1.
pub fn signal_n1b<S: Scalar>() -> PerturbationSignal<S> {
    planar_kick("n1b", -S::one())
}

pub fn builtin_system<S: Scalar>(id: &str) -> Option<HybridSystem<S>> {
    match id {
        PLANAR_ID => Some(planar()),
        FORE_ID => Some(fore()),
        _ => None,
    }
}

/// Built-in signal for a system; "zero" works for any dimension.
pub fn builtin_signal<S: Scalar>(id: &str, state_dim: usize) -> Option<PerturbationSignal<S>> {
    let s = match id {
        "na" => signal_na(),
        "nb" => signal_nb(),
        "n1a" => signal_n1a(),
        "n1b" => signal_n1b(),
        "zero" => PerturbationSignal::zero(state_dim),
        _ => return None,
    };
    (s.dim == state_dim).then_some(s)
}

#[derive(Debug, Clone, Serialize)]
pub struct SystemInfo {
    pub id: &'static str,
    pub state_dim: usize,
    pub description: &'static str,
    pub parameters: BTreeMap<&'static str, f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SignalInfo {
    pub id: &'static str,
    pub system: &'static str,
    pub kind: &'static str,
    pub description: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct Catalog {
    pub systems: Vec<SystemInfo>,
    pub signals: Vec<SignalInfo>,
    pub experiments: Vec<&'static str>,
}

pub fn list_builtins() -> Catalog {
    Catalog {
        systems: vec![
            SystemInfo {
                id: PLANAR_ID,
                state_dim: 2,
                description: "f = (1, 0) on C = cl(R^2 \\ D), g = 0 on D = {x2 >= |x1| + 1}",
                parameters: BTreeMap::new(),
            },
            SystemInfo {
                id: FORE_ID,
                state_dim: 4,
                description: "P(s) = (s+1)/(s(s+0.2)) with a first-order reset element, state (x1, x2, xr, tau)",
                parameters: BTreeMap::from([("eps", FORE_EPS), ("rho", FORE_RHO), ("lambda", FORE_LAMBDA)]),
            },
        ],
        signals: vec![
            SignalInfo {
                id: "na",
                system: FORE_ID,
                kind: "time",
                description: "n(t) = exp(-t) cos(10 pi t) on x2 (n2 = 0.2 n, n3 = -n)",
            },
            SignalInfo {
                id: "nb",
                system: FORE_ID,
                kind: "time",
                description: "n(t) = cos(10 pi t) on x2 (n2 = 0.2 n, n3 = -n)",
            },
            SignalInfo {
                id: "n1a",
                system: PLANAR_ID,
                kind: "impulse",
                description: "n1(1, 0) = (0, 1), zero elsewhere",
            },
            SignalInfo {
                id: "n1b",
                system: PLANAR_ID,
                kind: "impulse",
                description: "n1(1, 0) = (0, -1), zero elsewhere",
            },
            SignalInfo {
                id: "zero",
                system: "*",
                kind: "zero",
                description: "identically zero",
            },
        ],
        experiments: crate::experiment::BUILTIN_EXPERIMENTS.iter().map(|(id, _)| *id).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fore_flow_matrix_and_reset() {
        let h = fore::<f64>();
        let x = [0.3, -1.2, 0.7, 0.05];
        let a = fore_a::<f64>();
        let fx = h.flow_map(&x);
        for r in 0..3 {
            let want: f64 = (0..3).map(|c| a[r][c] * x[c]).sum();
            assert!((fx[r] - want).abs() < 1e-15);
        }
        assert_eq!(fx[3], 1.0);
        assert_eq!(h.jump_map(&x), vec![0.3, -1.2, 0.0, 0.0]);
    }

    #[test]
    fn eigenvector_flow() {
        let a = fore_a::<f64>();
        let v = [1.0, 0.0, -1.0];
        for r in 0..3 {
            let av: f64 = (0..3).map(|c| a[r][c] * v[c]).sum();
            assert_eq!(av, -v[r]);
        }
    }

    #[test]
    fn fore_viability_override() {
        let h = fore::<f64>();
        let ov = h.viability_override.clone().unwrap();
        // before the dwell time everything in C is viable
        assert!(ov(&[1.0, 0.5, 3.0, 0.0]));
        // on span{(1,0,-1)} with τ >= ρ: grazing, viable
        assert!(ov(&[0.7, 0.0, -0.7, 0.4]));
        // x2 = 0 with ẋ2 = x1 + xr > 0 and xr > 0: s = -2 x2 xr becomes negative
        assert!(!ov(&[1.0, 0.0, 1.0, 0.4]));
        // strictly inside the sector
        assert!(ov(&[0.0, 1.0, -1.0, 0.4]));
    }

    #[test]
    fn planar_sets_match_inequalities() {
        let h = planar::<f64>();
        for &(x1, x2) in &[
            (0.0f64, 2.0f64),
            (0.5, 1.0),
            (-3.0, 4.5),
            (0.0, 1.0),
            (2.0, 2.9),
        ] {
            let in_d = x2 >= x1.abs() + 1.0;
            assert_eq!(h.in_d(&[x1, x2], 0.0), in_d, "({x1}, {x2})");
            let in_c = x2 <= x1.abs() + 1.0;
            assert_eq!(h.in_c(&[x1, x2], 0.0), in_c, "({x1}, {x2})");
        }
    }

    #[test]
    fn planar_grazing_set_membership() {
        assert!(planar_grazing_set(&[-1.0, 1.0], 1e-12));
        assert!(planar_grazing_set(&[2.0, 3.0], 1e-12));
        assert!(!planar_grazing_set(&[-1.0, 2.0], 1e-12));
        assert!(!planar_grazing_set(&[1.0, 1.0], 1e-12));
    }

    #[test]
    fn catalog_lists_everything() {
        let c = list_builtins();
        assert!(c
            .systems
            .iter()
            .any(|s| s.id == "planar-ex32" && s.state_dim == 2));
        assert!(c
            .systems
            .iter()
            .any(|s| s.id == "fore-ex33" && s.state_dim == 4));
        for id in ["na", "nb", "n1a", "n1b"] {
            assert!(c.signals.iter().any(|s| s.id == id));
        }
        assert!(builtin_signal::<f64>("na", 2).is_none());
        assert!(builtin_signal::<f64>("zero", 4).is_some());
    }
}
