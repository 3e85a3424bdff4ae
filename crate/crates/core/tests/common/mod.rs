//! Generators of small piecewise-linear arcs and a brute-force closeness
//! oracle, shared by the property suite and the acceptance run.
#![allow(dead_code)]

use hybridsim::arc::arc_from_levels;
use hybridsim::HybridArc64;
use proptest::prelude::*;

/// Piecewise-linear levels `(t, x)`; kept separately so the oracle does not
/// share interpolation code with the library.
pub type Levels = Vec<Vec<(f64, Vec<f64>)>>;

pub const END: f64 = 2.0;

/// `n + 1` equally spaced times with both ends exact.
pub fn spaced(lo: f64, hi: f64, n: usize, k: usize) -> f64 {
    if k == n {
        hi
    } else {
        lo + (hi - lo) * k as f64 / n as f64
    }
}

pub fn state() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-0.3..0.3f64, 2)
}

/// One or two levels on `[0, 2]`, 1–3 equal pieces each (at least 0.25 long,
/// so slopes stay below 2.4).
pub fn levels() -> impl Strategy<Value = Levels> {
    (0.5..1.5f64, any::<bool>(), 1..=3usize, 1..=3usize).prop_flat_map(|(tj, jumps, n0, n1)| {
        let spans = if jumps {
            vec![(0.0, tj, n0), (tj, END, n1)]
        } else {
            vec![(0.0, END, n0)]
        };
        spans
            .into_iter()
            .map(|(lo, hi, n)| {
                prop::collection::vec(state(), n + 1).prop_map(move |xs| {
                    xs.into_iter()
                        .enumerate()
                        .map(|(k, x)| (spaced(lo, hi, n, k), x))
                        .collect::<Vec<_>>()
                })
            })
            .collect::<Vec<_>>()
    })
}

/// A second arc near the first: jump shifted, states nudged, sometimes a
/// level dropped or added.
pub fn nearby(a: &Levels) -> impl Strategy<Value = Levels> {
    let a = a.clone();
    (
        -0.2..0.2f64,
        prop::collection::vec(-0.15..0.15f64, 16),
        0..10u8,
        0.5..1.5f64,
    )
        .prop_map(move |(shift, noise, mode, tj_new)| {
            let mut noise = noise.into_iter().cycle();
            let mut b: Levels = a
                .iter()
                .map(|lvl| {
                    lvl.iter()
                        .map(|(t, x)| {
                            (
                                *t,
                                x.iter()
                                    .map(|v| (v + noise.next().unwrap()).clamp(-0.35, 0.35))
                                    .collect(),
                            )
                        })
                        .collect()
                })
                .collect();
            if b.len() == 2 {
                let tj = (b[0].last().unwrap().0 + shift).clamp(0.4, 1.6);
                let n0 = b[0].len() - 1;
                let n1 = b[1].len() - 1;
                for (k, p) in b[0].iter_mut().enumerate() {
                    p.0 = spaced(0.0, tj, n0, k);
                }
                for (k, p) in b[1].iter_mut().enumerate() {
                    p.0 = spaced(tj, END, n1, k);
                }
                if mode == 0 {
                    // drop the jump: level 0 runs to the end
                    let last = b[1].last().unwrap().1.clone();
                    b.truncate(1);
                    b[0].last_mut().unwrap().0 = tj;
                    b[0].push((END, last));
                }
            } else if mode == 0 {
                // add a jump
                let x = b[0][0].1.clone();
                let y: Vec<f64> = x.iter().map(|v| -v).collect();
                b = vec![
                    vec![(0.0, x.clone()), (tj_new, x)],
                    vec![(tj_new, y.clone()), (END, y)],
                ];
            }
            b
        })
}

pub fn pair() -> impl Strategy<Value = (Levels, Levels)> {
    prop_oneof![
        (levels(), levels()),
        levels().prop_flat_map(|a| (Just(a.clone()), nearby(&a))),
        levels().prop_flat_map(|a| (Just(a.clone()), nearby(&a))),
    ]
}

pub fn arc(l: &Levels) -> HybridArc64 {
    arc_from_levels(2, l.clone()).unwrap_or_else(|e| panic!("{e}: {l:?}"))
}

pub fn lerp(lvl: &[(f64, Vec<f64>)], t: f64) -> Vec<f64> {
    let k = lvl
        .iter()
        .rposition(|p| p.0 <= t)
        .unwrap_or(0)
        .min(lvl.len() - 2);
    let (t0, x0) = &lvl[k];
    let (t1, x1) = &lvl[k + 1];
    let th = if t1 > t0 {
        ((t - t0) / (t1 - t0)).clamp(0.0, 1.0)
    } else {
        0.0
    };
    x0.iter().zip(x1).map(|(a, b)| a + (b - a) * th).collect()
}

pub fn dense(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).ceil().max(1.0) as usize;
    (0..=n)
        .map(|k| lo + (hi - lo) * k as f64 / n as f64)
        .collect()
}

/// One-sided sup over a dense grid of `a` of the min over a dense grid of `b`.
pub fn oracle_one_sided(a: &Levels, b: &Levels, t_h: f64, j_h: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for (j, la) in a.iter().enumerate() {
        if j > j_h || la[0].0 > t_h {
            break;
        }
        let Some(lb) = b.get(j) else {
            return f64::INFINITY;
        };
        let inner: Vec<(f64, Vec<f64>)> = dense(lb[0].0, lb.last().unwrap().0, 2.5e-4)
            .into_iter()
            .map(|s| (s, lerp(lb, s)))
            .collect();
        let hi = la.last().unwrap().0.min(t_h);
        for t in dense(la[0].0, hi, 2e-3) {
            let x = lerp(la, t);
            let best = inner
                .iter()
                .map(|(s, y)| {
                    let d = ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2)).sqrt();
                    (t - s).abs().max(d)
                })
                .fold(f64::INFINITY, f64::min);
            worst = worst.max(best);
        }
    }
    worst
}

pub fn oracle_margin(a: &Levels, b: &Levels, t_h: f64, j_h: usize) -> f64 {
    oracle_one_sided(a, b, t_h, j_h).max(oracle_one_sided(b, a, t_h, j_h))
}
