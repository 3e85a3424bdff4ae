//! Hybrid time domains and hybrid arcs with dense output.
//!
//! A hybrid arc is stored as one trajectory segment per jump index `j`. Each
//! segment keeps the integrator breakpoints; values between breakpoints are
//! reconstructed by cubic Hermite interpolation when the flow derivative is
//! recorded at every breakpoint, and linearly otherwise.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{lit, to_f64, Scalar};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ArcError {
    #[error("({t}, {j}) is not in the hybrid time domain")]
    OutOfDomain { t: f64, j: usize },
    #[error("invalid hybrid time domain: {0}")]
    InvalidDomain(String),
    #[error("invalid segment for j = {j}: {reason}")]
    InvalidSegment { j: usize, reason: String },
    #[error("state dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("arc json: {0}")]
    Json(String),
}

/// One interval `[t_start, t_end] x {j}` of a hybrid time domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval<S> {
    pub t_start: S,
    pub t_end: S,
    pub j: usize,
    /// The interval is `[t_start, t_end)`; with `t_end = +inf` it is unbounded.
    pub open_end: bool,
}

impl<S: Scalar> Interval<S> {
    pub fn contains(&self, t: S) -> bool {
        if self.open_end {
            t >= self.t_start && t < self.t_end
        } else {
            t >= self.t_start && t <= self.t_end
        }
    }

    pub fn is_degenerate(&self) -> bool {
        self.t_start == self.t_end && !self.open_end
    }
}

/// Ordered list of intervals; jump index `j` is the position in the list.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridTimeDomain<S> {
    intervals: Vec<Interval<S>>,
}

impl<S: Scalar> HybridTimeDomain<S> {
    pub fn new(intervals: Vec<Interval<S>>) -> Result<Self, ArcError> {
        let first = intervals
            .first()
            .ok_or_else(|| ArcError::InvalidDomain("no intervals".into()))?;
        if first.t_start != S::zero() || first.j != 0 {
            return Err(ArcError::InvalidDomain(
                "first interval must start at (0, 0)".into(),
            ));
        }
        for (k, iv) in intervals.iter().enumerate() {
            if iv.j != k {
                return Err(ArcError::InvalidDomain(format!(
                    "interval {k} carries j = {}",
                    iv.j
                )));
            }
            if !(iv.t_start <= iv.t_end) {
                return Err(ArcError::InvalidDomain(format!(
                    "interval j = {k} has t_start > t_end"
                )));
            }
            if iv.open_end && k + 1 != intervals.len() {
                return Err(ArcError::InvalidDomain(
                    "only the last interval may be right-open".into(),
                ));
            }
            if k > 0 && intervals[k - 1].t_end != iv.t_start {
                return Err(ArcError::InvalidDomain(format!(
                    "interval j = {k} does not start where j = {} ends",
                    k - 1
                )));
            }
        }
        Ok(Self { intervals })
    }

    pub fn intervals(&self) -> &[Interval<S>] {
        &self.intervals
    }

    pub fn interval(&self, j: usize) -> Option<&Interval<S>> {
        self.intervals.get(j)
    }

    pub fn contains(&self, t: S, j: usize) -> bool {
        self.interval(j).is_some_and(|iv| iv.contains(t))
    }

    pub fn max_j(&self) -> usize {
        self.intervals.len() - 1
    }

    /// Jump instants `t_1 <= t_2 <= ...`.
    pub fn jump_times(&self) -> Vec<S> {
        self.intervals.iter().skip(1).map(|iv| iv.t_start).collect()
    }
}

/// Dense trajectory record for one interval.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment<S> {
    pub times: Vec<S>,
    pub states: Vec<Vec<S>>,
    /// Flow derivative at each breakpoint; enables Hermite interpolation.
    pub derivs: Option<Vec<Vec<S>>>,
}

impl<S: Scalar> Segment<S> {
    pub fn order(&self) -> usize {
        if self.derivs.is_some() {
            3
        } else {
            1
        }
    }

    /// Value at `t`, or `None` outside the recorded breakpoints.
    pub fn eval(&self, t: S) -> Option<Vec<S>> {
        let n = self.times.len();
        if n == 0 || t < self.times[0] || t > self.times[n - 1] {
            return None;
        }
        // last index with times[k] <= t
        let k = self.times.partition_point(|&s| s <= t).saturating_sub(1);
        if self.times[k] == t || k + 1 == n {
            return Some(self.states[k].clone());
        }
        let (t0, t1) = (self.times[k], self.times[k + 1]);
        let h = t1 - t0;
        if h <= S::zero() {
            return Some(self.states[k].clone());
        }
        let th = (t - t0) / h;
        let x0 = &self.states[k];
        let x1 = &self.states[k + 1];
        Some(match &self.derivs {
            Some(d) => hermite(x0, &d[k], x1, &d[k + 1], h, th),
            None => x0.iter().zip(x1).map(|(&a, &b)| a + (b - a) * th).collect(),
        })
    }
}

/// Cubic Hermite interpolant on `[t0, t0 + h]` at `t0 + theta h`.
pub fn hermite<S: Scalar>(x0: &[S], f0: &[S], x1: &[S], f1: &[S], h: S, theta: S) -> Vec<S> {
    let one = S::one();
    let two: S = lit(2.0);
    let three: S = lit(3.0);
    let t2 = theta * theta;
    let t3 = t2 * theta;
    let h00 = two * t3 - three * t2 + one;
    let h10 = t3 - two * t2 + theta;
    let h01 = -two * t3 + three * t2;
    let h11 = t3 - t2;
    (0..x0.len())
        .map(|i| h00 * x0[i] + h10 * h * f0[i] + h01 * x1[i] + h11 * h * f1[i])
        .collect()
}

/// A function on a hybrid time domain, flow-continuous on each interval.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridArc<S> {
    domain: HybridTimeDomain<S>,
    segments: Vec<Segment<S>>,
    state_dim: usize,
}

impl<S: Scalar> HybridArc<S> {
    pub fn new(
        domain: HybridTimeDomain<S>,
        segments: Vec<Segment<S>>,
        state_dim: usize,
    ) -> Result<Self, ArcError> {
        if segments.len() != domain.intervals().len() {
            return Err(ArcError::InvalidDomain(format!(
                "{} segments for {} intervals",
                segments.len(),
                domain.intervals().len()
            )));
        }
        for (iv, seg) in domain.intervals().iter().zip(&segments) {
            let j = iv.j;
            let bad = |reason: &str| ArcError::InvalidSegment {
                j,
                reason: reason.to_string(),
            };
            if seg.times.is_empty() || seg.times.len() != seg.states.len() {
                return Err(bad("times/states length mismatch or empty"));
            }
            if let Some(d) = &seg.derivs {
                if d.len() != seg.times.len() {
                    return Err(bad("derivs length mismatch"));
                }
                if d.iter().any(|v| v.len() != state_dim) {
                    return Err(bad("derivative dimension mismatch"));
                }
            }
            if seg.states.iter().any(|x| x.len() != state_dim) {
                return Err(bad("state dimension mismatch"));
            }
            if seg.times.windows(2).any(|w| w[1] < w[0]) {
                return Err(bad("breakpoints not sorted"));
            }
            let last = *seg.times.last().unwrap();
            if seg.times[0] != iv.t_start {
                return Err(bad("first breakpoint must equal interval start"));
            }
            if !iv.open_end && last != iv.t_end {
                return Err(bad("last breakpoint must equal interval end"));
            }
            if iv.open_end && last > iv.t_end {
                return Err(bad("breakpoint beyond interval end"));
            }
            if iv.is_degenerate() && seg.times.len() != 2 {
                return Err(bad(
                    "degenerate interval must carry exactly two breakpoints",
                ));
            }
        }
        Ok(Self {
            domain,
            segments,
            state_dim,
        })
    }

    pub fn domain(&self) -> &HybridTimeDomain<S> {
        &self.domain
    }

    pub fn segments(&self) -> &[Segment<S>] {
        &self.segments
    }

    pub fn segment(&self, j: usize) -> Option<&Segment<S>> {
        self.segments.get(j)
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn max_j(&self) -> usize {
        self.domain.max_j()
    }

    pub fn jump_times(&self) -> Vec<S> {
        self.domain.jump_times()
    }

    pub fn first_jump_time(&self) -> Option<S> {
        self.jump_times().first().copied()
    }

    pub fn initial_state(&self) -> &[S] {
        &self.segments[0].states[0]
    }

    /// Last recorded point `(t, j, x)`.
    pub fn end(&self) -> (S, usize, &[S]) {
        let seg = self.segments.last().unwrap();
        (
            *seg.times.last().unwrap(),
            self.max_j(),
            seg.states.last().unwrap(),
        )
    }

    /// Time extent of level `j` covered by recorded breakpoints.
    pub fn level_span(&self, j: usize) -> Option<(S, S)> {
        let seg = self.segments.get(j)?;
        Some((seg.times[0], *seg.times.last().unwrap()))
    }

    pub fn contains(&self, t: S, j: usize) -> bool {
        match (self.domain.interval(j), self.level_span(j)) {
            (Some(iv), Some((a, b))) => iv.contains(t) && t >= a && t <= b,
            _ => false,
        }
    }

    pub fn eval(&self, t: S, j: usize) -> Result<Vec<S>, ArcError> {
        if !self.contains(t, j) {
            return Err(ArcError::OutOfDomain { t: to_f64(t), j });
        }
        self.segments[j]
            .eval(t)
            .ok_or(ArcError::OutOfDomain { t: to_f64(t), j })
    }

    /// Restriction to `{(t, j) in dom : t <= t_max, j <= j_max}`.
    pub fn truncate(&self, t_max: S, j_max: usize) -> HybridArc<S> {
        let mut intervals = Vec::new();
        let mut segments = Vec::new();
        for (iv, seg) in self.domain.intervals().iter().zip(&self.segments) {
            if iv.j > j_max || iv.t_start > t_max {
                break;
            }
            let last = *seg.times.last().unwrap();
            if last <= t_max {
                intervals.push(*iv);
                segments.push(seg.clone());
                continue;
            }
            // clip at t_max, inserting an interpolated endpoint
            let mut times = Vec::new();
            let mut states = Vec::new();
            let mut derivs = seg.derivs.as_ref().map(|_| Vec::new());
            for (k, &t) in seg.times.iter().enumerate() {
                if t > t_max {
                    break;
                }
                times.push(t);
                states.push(seg.states[k].clone());
                if let (Some(out), Some(d)) = (derivs.as_mut(), seg.derivs.as_ref()) {
                    out.push(d[k].clone());
                }
            }
            if *times.last().unwrap() < t_max {
                let x = seg.eval(t_max).expect("t_max inside segment");
                let k = seg.times.partition_point(|&s| s <= t_max);
                if let (Some(out), Some(d)) = (derivs.as_mut(), seg.derivs.as_ref()) {
                    // derivative at the clip point from the Hermite polynomial of its step
                    out.push(hermite_slope(seg, d, k - 1, t_max));
                }
                times.push(t_max);
                states.push(x);
            }
            let degenerate_fix = iv.t_start == t_max && times.len() == 1;
            if degenerate_fix {
                times.push(t_max);
                states.push(states[0].clone());
                if let Some(out) = derivs.as_mut() {
                    let d0 = out[0].clone();
                    out.push(d0);
                }
            }
            intervals.push(Interval {
                t_start: iv.t_start,
                t_end: t_max,
                j: iv.j,
                open_end: false,
            });
            segments.push(Segment {
                times,
                states,
                derivs,
            });
            break;
        }
        let domain = HybridTimeDomain::new(intervals).expect("restriction of a valid domain");
        HybridArc::new(domain, segments, self.state_dim).expect("restriction of a valid arc")
    }

    pub fn to_json_value(&self) -> ArcJson {
        ArcJson {
            state_dim: self.state_dim,
            intervals: self
                .domain
                .intervals()
                .iter()
                .map(|iv| IntervalJson {
                    t0: to_f64(iv.t_start),
                    t1: if iv.t_end.is_finite() {
                        Some(to_f64(iv.t_end))
                    } else {
                        None
                    },
                    j: iv.j,
                    open_end: iv.open_end,
                })
                .collect(),
            segments: self
                .segments
                .iter()
                .map(|s| SegmentJson {
                    times: s.times.iter().map(|&t| to_f64(t)).collect(),
                    states: s
                        .states
                        .iter()
                        .map(|x| x.iter().map(|&v| to_f64(v)).collect())
                        .collect(),
                    derivs: s.derivs.as_ref().map(|d| {
                        d.iter()
                            .map(|x| x.iter().map(|&v| to_f64(v)).collect())
                            .collect()
                    }),
                })
                .collect(),
        }
    }

    pub fn from_json_value(v: &ArcJson) -> Result<Self, ArcError> {
        let conv = |x: f64| -> S { S::from_f64(x).unwrap_or_else(S::nan) };
        let intervals = v
            .intervals
            .iter()
            .map(|iv| Interval {
                t_start: conv(iv.t0),
                t_end: iv.t1.map(conv).unwrap_or_else(S::infinity),
                j: iv.j,
                open_end: iv.open_end || iv.t1.is_none(),
            })
            .collect();
        let domain = HybridTimeDomain::new(intervals)?;
        let segments = v
            .segments
            .iter()
            .map(|s| Segment {
                times: s.times.iter().map(|&t| conv(t)).collect(),
                states: s
                    .states
                    .iter()
                    .map(|x| x.iter().map(|&c| conv(c)).collect())
                    .collect(),
                derivs: s.derivs.as_ref().map(|d| {
                    d.iter()
                        .map(|x| x.iter().map(|&c| conv(c)).collect())
                        .collect()
                }),
            })
            .collect();
        HybridArc::new(domain, segments, v.state_dim)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_json_value()).expect("arc serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ArcError> {
        let v: ArcJson = serde_json::from_str(text).map_err(|e| ArcError::Json(e.to_string()))?;
        Self::from_json_value(&v)
    }

    /// One row per breakpoint: `t, j, x_1, ..., x_n`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,j");
        for i in 1..=self.state_dim {
            let _ = write!(out, ",x{i}");
        }
        out.push('\n');
        for (j, seg) in self.segments.iter().enumerate() {
            for (t, x) in seg.times.iter().zip(&seg.states) {
                let _ = write!(out, "{},{}", to_f64(*t), j);
                for v in x {
                    let _ = write!(out, ",{}", to_f64(*v));
                }
                out.push('\n');
            }
        }
        out
    }
}

fn hermite_slope<S: Scalar>(seg: &Segment<S>, d: &[Vec<S>], k: usize, t: S) -> Vec<S> {
    let (t0, t1) = (seg.times[k], seg.times[k + 1]);
    let h = t1 - t0;
    if h <= S::zero() {
        return d[k].clone();
    }
    let th = (t - t0) / h;
    let (x0, x1, f0, f1) = (&seg.states[k], &seg.states[k + 1], &d[k], &d[k + 1]);
    let six: S = lit(6.0);
    let four: S = lit(4.0);
    let three: S = lit(3.0);
    let two: S = lit(2.0);
    let t2 = th * th;
    let dh00 = (six * t2 - six * th) / h;
    let dh10 = three * t2 - four * th + S::one();
    let dh01 = (-six * t2 + six * th) / h;
    let dh11 = three * t2 - two * th;
    (0..x0.len())
        .map(|i| dh00 * x0[i] + dh10 * f0[i] + dh01 * x1[i] + dh11 * f1[i])
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct IntervalJson {
    pub t0: f64,
    /// `null` for an unbounded last interval.
    pub t1: Option<f64>,
    pub j: usize,
    #[serde(default)]
    pub open_end: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SegmentJson {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub derivs: Option<Vec<Vec<f64>>>,
}

/// Serialized form: `{state_dim, intervals:[{t0,t1,j,open_end}], segments:[{times, states}]}`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ArcJson {
    pub state_dim: usize,
    pub intervals: Vec<IntervalJson>,
    pub segments: Vec<SegmentJson>,
}

/// Incremental construction used by the simulator.
#[derive(Debug, Clone)]
pub(crate) struct ArcBuilder<S> {
    state_dim: usize,
    segments: Vec<Segment<S>>,
}

impl<S: Scalar> ArcBuilder<S> {
    pub fn new(t0: S, x0: Vec<S>, f0: Option<Vec<S>>) -> Self {
        let state_dim = x0.len();
        Self {
            state_dim,
            segments: vec![Segment {
                times: vec![t0],
                states: vec![x0],
                derivs: Some(vec![f0.unwrap_or_else(|| vec![S::nan(); state_dim])]),
            }],
        }
    }

    pub fn j(&self) -> usize {
        self.segments.len() - 1
    }

    pub fn interval_start(&self) -> S {
        self.segments.last().unwrap().times[0]
    }

    /// Overwrites the derivative recorded at the current end point.
    pub fn set_last_deriv(&mut self, f: Vec<S>) {
        let seg = self.segments.last_mut().unwrap();
        if let Some(d) = seg.derivs.as_mut() {
            *d.last_mut().unwrap() = f;
        }
    }

    pub fn push(&mut self, t: S, x: Vec<S>, f: Vec<S>) {
        let seg = self.segments.last_mut().unwrap();
        if *seg.times.last().unwrap() == t {
            *seg.states.last_mut().unwrap() = x;
            if let Some(d) = seg.derivs.as_mut() {
                *d.last_mut().unwrap() = f;
            }
            return;
        }
        seg.times.push(t);
        seg.states.push(x);
        if let Some(d) = seg.derivs.as_mut() {
            d.push(f);
        }
    }

    pub fn jump(&mut self, t: S, x: Vec<S>, f: Option<Vec<S>>) {
        let dim = self.state_dim;
        self.segments.push(Segment {
            times: vec![t],
            states: vec![x],
            derivs: Some(vec![f.unwrap_or_else(|| vec![S::nan(); dim])]),
        });
    }

    pub fn finish(mut self) -> HybridArc<S> {
        for seg in &mut self.segments {
            if seg.times.len() == 1 {
                seg.times.push(seg.times[0]);
                seg.states.push(seg.states[0].clone());
                if let Some(d) = seg.derivs.as_mut() {
                    d.push(d[0].clone());
                }
            }
            // derivatives are only usable if finite everywhere
            if let Some(d) = &seg.derivs {
                if d.iter().any(|v| v.iter().any(|c| !c.is_finite())) {
                    seg.derivs = None;
                }
            }
        }
        let intervals = self
            .segments
            .iter()
            .enumerate()
            .map(|(j, s)| Interval {
                t_start: s.times[0],
                t_end: *s.times.last().unwrap(),
                j,
                open_end: false,
            })
            .collect();
        let domain = HybridTimeDomain::new(intervals).expect("builder keeps domain invariants");
        HybridArc::new(domain, self.segments, self.state_dim).expect("builder keeps arc invariants")
    }
}

/// Piecewise-linear arc from explicit levels, mostly for tests and fixtures.
/// Each level is a list of `(t, x)` breakpoints; consecutive levels must share
/// the jump instant.
pub fn arc_from_levels<S: Scalar>(
    state_dim: usize,
    levels: Vec<Vec<(S, Vec<S>)>>,
) -> Result<HybridArc<S>, ArcError> {
    let mut intervals = Vec::new();
    let mut segments = Vec::new();
    for (j, pts) in levels.into_iter().enumerate() {
        let mut pts = pts;
        if pts.len() == 1 {
            let p = pts[0].clone();
            pts.push(p);
        }
        let (times, states): (Vec<S>, Vec<Vec<S>>) = pts.into_iter().unzip();
        intervals.push(Interval {
            t_start: times[0],
            t_end: *times.last().unwrap_or(&S::zero()),
            j,
            open_end: false,
        });
        segments.push(Segment {
            times,
            states,
            derivs: None,
        });
    }
    HybridArc::new(HybridTimeDomain::new(intervals)?, segments, state_dim)
}
