//! (T, J, ε)-closeness of hybrid arcs.
//!
//! For a point `(t, j)` of one arc, the *point gap* is
//! `min_s max(|t - s|, |a(t, j) - b(s, j)|)` over `(s, j)` in the other arc's
//! domain. The arcs are close iff every point gap with `t <= T`, `j <= J` is
//! below ε (both directions). Point gaps are evaluated on a fixed outer grid
//! (breakpoints refined to `outer_step`, cut at `T`) and each gap is found by
//! an ε-independent search, so the verdict is monotone in ε and `T` by
//! construction.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arc::{HybridArc, Segment};
use crate::scalar::{lit, vec, Scalar};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClosenessError {
    #[error("state dimension mismatch: {a} vs {b}")]
    Dimension { a: usize, b: usize },
    #[error("epsilon must be positive and finite")]
    Epsilon,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WitnessSide {
    AToB,
    BToA,
}

/// A point of one arc without an ε-match in the other.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness<S> {
    pub side: WitnessSide,
    pub t: S,
    pub j: usize,
    /// Best candidate time in the other arc; absent when level `j` is missing.
    pub best_s: Option<S>,
    /// Point gap at `best_s` (or to the nearest point of the level); `+inf`
    /// when the level is missing.
    pub best_distance: S,
}

impl<S: Scalar> Witness<S> {
    pub fn missing_level(&self) -> bool {
        self.best_s.is_none() && self.best_distance.is_infinite()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosenessVerdict<S> {
    pub close: bool,
    pub t_horizon: S,
    pub j_horizon: usize,
    pub epsilon: S,
    pub witness: Option<Witness<S>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosenessOptions<S> {
    /// Maximal spacing of the outer sample grid.
    pub outer_step: S,
    /// Uniform samples per inner search window.
    pub inner_grid: usize,
    /// Golden-section iterations refining the best inner candidate.
    pub refine_iters: usize,
}

impl<S: Scalar> Default for ClosenessOptions<S> {
    fn default() -> Self {
        Self {
            outer_step: lit(1e-3),
            inner_grid: 16,
            refine_iters: 48,
        }
    }
}

const SLACK: f64 = 1e-12;

/// `v < eps` with the fixed slack; shrunk for tiny ε so a zero gap always passes.
fn strictly_below<S: Scalar>(v: S, eps: S) -> bool {
    let slack = lit::<S>(SLACK).min(eps * lit(0.25));
    v < eps - slack
}

pub fn closeness_check<S: Scalar>(
    a: &HybridArc<S>,
    b: &HybridArc<S>,
    t_horizon: S,
    j_horizon: usize,
    epsilon: S,
) -> Result<ClosenessVerdict<S>, ClosenessError> {
    closeness_check_with(
        a,
        b,
        t_horizon,
        j_horizon,
        epsilon,
        &ClosenessOptions::default(),
    )
}

pub fn closeness_check_with<S: Scalar>(
    a: &HybridArc<S>,
    b: &HybridArc<S>,
    t_horizon: S,
    j_horizon: usize,
    epsilon: S,
    opts: &ClosenessOptions<S>,
) -> Result<ClosenessVerdict<S>, ClosenessError> {
    dims(a, b)?;
    if !(epsilon > S::zero()) || !epsilon.is_finite() {
        return Err(ClosenessError::Epsilon);
    }
    let mut verdict = ClosenessVerdict {
        close: true,
        t_horizon,
        j_horizon,
        epsilon,
        witness: None,
    };
    for (side, p, q) in [(WitnessSide::AToB, a, b), (WitnessSide::BToA, b, a)] {
        for (t, j, x) in outer_points(p, t_horizon, j_horizon, opts.outer_step) {
            let gap = point_gap(&x, t, q.segment(j), Window::Eps(epsilon), opts);
            if !gap.found {
                verdict.close = false;
                verdict.witness = Some(Witness {
                    side,
                    t,
                    j,
                    best_s: gap.best_s,
                    best_distance: gap.value,
                });
                return Ok(verdict);
            }
        }
    }
    Ok(verdict)
}

/// Infimal ε for which the arcs are (T, J, ε)-close; `+inf` when a level
/// present in one arc (up to `J`, at times `<= T`) is absent in the other.
pub fn closeness_margin<S: Scalar>(
    a: &HybridArc<S>,
    b: &HybridArc<S>,
    t_horizon: S,
    j_horizon: usize,
) -> Result<S, ClosenessError> {
    closeness_margin_with(a, b, t_horizon, j_horizon, &ClosenessOptions::default())
}

pub fn closeness_margin_with<S: Scalar>(
    a: &HybridArc<S>,
    b: &HybridArc<S>,
    t_horizon: S,
    j_horizon: usize,
    opts: &ClosenessOptions<S>,
) -> Result<S, ClosenessError> {
    dims(a, b)?;
    let mut worst = S::zero();
    for (p, q) in [(a, b), (b, a)] {
        for (t, j, x) in outer_points(p, t_horizon, j_horizon, opts.outer_step) {
            let gap = point_gap(&x, t, q.segment(j), Window::Min, opts);
            if gap.value.is_infinite() {
                return Ok(S::infinity());
            }
            worst = worst.max(gap.value);
        }
    }
    Ok(worst)
}

fn dims<S: Scalar>(a: &HybridArc<S>, b: &HybridArc<S>) -> Result<(), ClosenessError> {
    if a.state_dim() != b.state_dim() {
        return Err(ClosenessError::Dimension {
            a: a.state_dim(),
            b: b.state_dim(),
        });
    }
    Ok(())
}

/// Sample points `(t, j, x)` of `arc` with `t <= T`, `j <= J`, evaluated
/// lazily so a failing check stops early.
fn outer_points<S: Scalar>(
    arc: &HybridArc<S>,
    t_horizon: S,
    j_horizon: usize,
    step: S,
) -> impl Iterator<Item = (S, usize, Vec<S>)> + '_ {
    outer_times(arc, t_horizon, j_horizon, step)
        .into_iter()
        .filter_map(move |(t, j)| arc.segments()[j].eval(t).map(|x| (t, j, x)))
}

/// Breakpoints of every level, with each gap subdivided uniformly into pieces
/// of at most `step`. The grid does not depend on `T`; the horizon only cuts it,
/// so the sample set for `T' <= T` is a subset of the one for `T`.
fn outer_times<S: Scalar>(
    arc: &HybridArc<S>,
    t_horizon: S,
    j_horizon: usize,
    step: S,
) -> Vec<(S, usize)> {
    let mut out = Vec::new();
    for (j, seg) in arc.segments().iter().enumerate() {
        if j > j_horizon || seg.times[0] > t_horizon {
            break;
        }
        let mut prev: Option<S> = None;
        'level: for &tb in &seg.times {
            if let Some(tp) = prev {
                if tb == tp {
                    continue;
                }
                let gap = tb - tp;
                if gap > step {
                    let n = (gap / step).ceil().to_usize().unwrap_or(1);
                    let ns: S = S::from_usize(n).unwrap();
                    for k in 1..n {
                        let t = tp + gap * S::from_usize(k).unwrap() / ns;
                        if t > t_horizon {
                            break 'level;
                        }
                        out.push((t, j));
                    }
                }
            }
            if tb > t_horizon {
                break;
            }
            out.push((tb, j));
            prev = Some(tb);
        }
    }
    out
}

#[derive(Clone, Copy)]
enum Window<S> {
    /// Same candidates as `Min`, stopping at the first one with gap below ε.
    Eps(S),
    /// Full minimization.
    Min,
}

struct Gap<S> {
    value: S,
    best_s: Option<S>,
    found: bool,
}

/// Golden-section search on `[l, r]`; returns the best point seen.
fn golden<S: Scalar>(phi: &impl Fn(S) -> S, mut l: S, mut r: S, iters: usize) -> (S, S) {
    let g: S = lit(0.618_033_988_749_894_9);
    let mut c = r - g * (r - l);
    let mut d = l + g * (r - l);
    let (mut fc, mut fd) = (phi(c), phi(d));
    let mut best = if fc < fd { (c, fc) } else { (d, fd) };
    for _ in 0..iters {
        if fc < fd {
            r = d;
            d = c;
            fd = fc;
            c = r - g * (r - l);
            fc = phi(c);
        } else {
            l = c;
            c = d;
            fc = fd;
            d = l + g * (r - l);
            fd = phi(d);
        }
        for (s, v) in [(c, fc), (d, fd)] {
            if v < best.1 {
                best = (s, v);
            }
        }
    }
    best
}

fn point_gap<S: Scalar>(
    x: &[S],
    t: S,
    seg: Option<&Segment<S>>,
    window: Window<S>,
    opts: &ClosenessOptions<S>,
) -> Gap<S> {
    let Some(seg) = seg else {
        return Gap {
            value: S::infinity(),
            best_s: None,
            found: false,
        };
    };
    let lo = seg.times[0];
    let hi = *seg.times.last().unwrap();
    let phi = |s: S| -> S {
        let y = seg.eval(s).expect("s inside segment");
        (t - s).abs().max(vec::dist(x, &y))
    };
    let s0 = t.max(lo).min(hi);
    let v0 = phi(s0);
    if let Window::Eps(eps) = window {
        // the minimization below starts from s0, so this shortcut agrees with it
        if strictly_below(v0, eps) {
            return Gap {
                value: v0,
                best_s: Some(s0),
                found: true,
            };
        }
    }
    // nothing farther than v0 in time can beat v0
    // (clamped to contain s0 against rounding in t ± v0)
    let wlo = (t - v0).max(lo).min(s0);
    let whi = (t + v0).min(hi).max(s0);

    let mut cands: Vec<S> = Vec::with_capacity(opts.inner_grid + 8);
    cands.push(wlo);
    cands.push(whi);
    cands.push(s0.max(wlo).min(whi));
    let first = seg.times.partition_point(|&s| s < wlo);
    for &s in &seg.times[first..] {
        if s > whi {
            break;
        }
        cands.push(s);
    }
    if whi > wlo {
        let n = opts.inner_grid.max(2);
        let ns = S::from_usize(n).unwrap();
        for k in 1..n {
            cands.push(wlo + (whi - wlo) * S::from_usize(k).unwrap() / ns);
        }
    }
    cands.sort_by(|p, q| p.partial_cmp(q).unwrap());
    cands.dedup();

    let mut best = (S::infinity(), s0);
    let mut vals = Vec::with_capacity(cands.len());
    for &s in &cands {
        let v = phi(s);
        // the candidate sequence is ε-independent, so stopping at the first
        // hit decides `min < ε` exactly
        if let Window::Eps(eps) = window {
            if strictly_below(v, eps) {
                return Gap {
                    value: v,
                    best_s: Some(s),
                    found: true,
                };
            }
        }
        if v < best.0 {
            best = (v, s);
        }
        vals.push(v);
    }

    // golden-section refinement around every local minimum of the grid,
    // most promising first; one bracket alone misses minima that sit next to
    // a slightly higher grid value
    let mut minima: Vec<usize> = (0..cands.len())
        .filter(|&k| {
            (k == 0 || vals[k] <= vals[k - 1]) && (k + 1 == cands.len() || vals[k] <= vals[k + 1])
        })
        .collect();
    minima.sort_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap().then(a.cmp(&b)));
    for k in minima {
        let l = cands[k.saturating_sub(1)];
        let r = cands[(k + 1).min(cands.len() - 1)];
        if r <= l {
            continue;
        }
        let (s, v) = golden(&phi, l, r, opts.refine_iters);
        if v < best.0 {
            best = (v, s);
        }
        if let Window::Eps(eps) = window {
            if strictly_below(best.0, eps) {
                return Gap {
                    value: best.0,
                    best_s: Some(best.1),
                    found: true,
                };
            }
        }
    }
    let found = match window {
        Window::Eps(eps) => strictly_below(best.0, eps),
        Window::Min => true,
    };
    Gap {
        value: best.0,
        best_s: Some(best.1),
        found,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arc::arc_from_levels;

    fn phi_c() -> HybridArc<f64> {
        arc_from_levels(2, vec![vec![(0.0, vec![-1.0, 1.0]), (3.0, vec![2.0, 1.0])]]).unwrap()
    }

    fn phi_d() -> HybridArc<f64> {
        arc_from_levels(
            2,
            vec![
                vec![(0.0, vec![-1.0, 1.0]), (1.0, vec![0.0, 1.0])],
                vec![(1.0, vec![0.0, 0.0]), (3.0, vec![2.0, 0.0])],
            ],
        )
        .unwrap()
    }

    #[test]
    fn reflexive_even_for_tiny_eps() {
        let a = phi_d();
        for eps in [1.0, 1e-6, 1e-14] {
            assert!(closeness_check(&a, &a, 3.0, 5, eps).unwrap().close);
        }
        assert_eq!(closeness_margin(&a, &a, 3.0, 5).unwrap(), 0.0);
    }

    #[test]
    fn missing_level_witness_and_infinite_margin() {
        let v = closeness_check(&phi_d(), &phi_c(), 2.0, 1, 0.5).unwrap();
        assert!(!v.close);
        let w = v.witness.unwrap();
        assert_eq!(w.side, WitnessSide::AToB);
        assert_eq!(w.j, 1);
        assert!(w.missing_level());
        assert!(closeness_margin(&phi_d(), &phi_c(), 2.0, 1)
            .unwrap()
            .is_infinite());
    }

    #[test]
    fn margin_of_flow_vs_jump_on_level_zero() {
        // φ^C's points (t, 0) for t in (1, 2] best match φ^D(1, 0): gap t - 1
        let m = closeness_margin(&phi_c(), &phi_d(), 2.0, 0).unwrap();
        assert!((m - 1.0).abs() < 1e-9, "{m}");
        assert!(
            closeness_check(&phi_c(), &phi_d(), 2.0, 0, 1.01)
                .unwrap()
                .close
        );
        let v = closeness_check(&phi_c(), &phi_d(), 2.0, 0, 0.99).unwrap();
        assert!(!v.close);
        assert_eq!(v.witness.unwrap().side, WitnessSide::AToB);
    }

    #[test]
    fn time_shift_is_tolerated_up_to_eps() {
        // same jump, shifted by 0.05 in time
        let b = arc_from_levels(
            2,
            vec![
                vec![(0.0, vec![-1.0, 1.0]), (1.05, vec![0.05, 1.0])],
                vec![(1.05, vec![0.05, 0.0]), (3.0, vec![2.0, 0.0])],
            ],
        )
        .unwrap();
        assert!(closeness_check(&phi_d(), &b, 3.0, 1, 0.06).unwrap().close);
        assert!(!closeness_check(&phi_d(), &b, 3.0, 1, 0.04).unwrap().close);
    }

    #[test]
    fn rejects_bad_inputs() {
        let a = phi_c();
        let b = arc_from_levels(1, vec![vec![(0.0, vec![0.0]), (1.0, vec![1.0])]]).unwrap();
        assert!(matches!(
            closeness_check(&a, &b, 1.0, 0, 0.1),
            Err(ClosenessError::Dimension { .. })
        ));
        assert_eq!(
            closeness_check(&a, &a, 1.0, 0, 0.0),
            Err(ClosenessError::Epsilon)
        );
    }
}
