//! Adaptive flow integration with jump-set / flow-set event location.
//!
//! Events are detected on the membership band (`margin <= tol_set`) at four
//! samples per step and localized by bisection on the step's Hermite
//! interpolant. A D-entry found on the band is moved to the first point with
//! `m_D <= 0` when that happens within the same step, and a C-exit to the last
//! point with `m_C <= 0`; this makes event times independent of how steeply
//! the margin crosses the band.

use crate::arc::hermite;
use crate::scalar::{lit, to_f64, Scalar};

use super::config::SolverConfig;
use super::rk::{dopri_step, initial_step, step_factor};
use super::{HybridDynamics, Side, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowStop {
    HitJumpSet,
    LeftFlowSet,
    ReachedHorizon,
    MandatoryStop,
}

/// How reaching the jump set ends a flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JumpEntry {
    /// Stop whenever the state is in D, including at the start.
    Level,
    /// Stop only on entering D; a flow that starts (and stays) in D continues.
    Edge,
    /// Never stop because of D.
    Ignore,
}

#[derive(Debug, Clone)]
pub struct FlowOptions<S> {
    pub t_max: S,
    /// Extra times to land on exactly, besides the system's own.
    pub stops: Vec<S>,
    pub jump_entry: JumpEntry,
    /// With `Edge`: stop every `grid` seconds while flowing inside D from the start.
    pub grazing_grid: Option<S>,
    /// Added to `tol_set` for the flow-set test.
    pub set_slack: S,
    /// Land on the system's impulse instants (off for short probes).
    pub system_stops: bool,
}

impl<S: Scalar> FlowOptions<S> {
    pub fn new(t_max: S, jump_entry: JumpEntry) -> Self {
        Self {
            t_max,
            stops: Vec::new(),
            jump_entry,
            grazing_grid: None,
            set_slack: S::zero(),
            system_stops: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FlowResult<S> {
    pub times: Vec<S>,
    pub states: Vec<Vec<S>>,
    pub derivs: Vec<Vec<S>>,
    pub stop: FlowStop,
}

impl<S: Scalar> FlowResult<S> {
    pub fn t_end(&self) -> S {
        *self.times.last().unwrap()
    }

    pub fn x_end(&self) -> &[S] {
        self.states.last().unwrap()
    }

    pub fn duration(&self) -> S {
        self.t_end() - self.times[0]
    }
}

/// Flow from `(t0, 0)` up to the configured horizon, stopping on D.
pub fn integrate_flow<S: Scalar>(
    sys: &dyn HybridDynamics<S>,
    x0: &[S],
    t0: S,
    cfg: &SolverConfig,
) -> Result<FlowResult<S>, SimError> {
    let opts = FlowOptions::new(lit(cfg.horizon_t), JumpEntry::Level);
    integrate_flow_with(sys, x0, t0, 0, cfg, &opts)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum StopKind {
    Horizon,
    Mandatory,
    Grazing,
}

pub fn integrate_flow_with<S: Scalar>(
    sys: &dyn HybridDynamics<S>,
    x0: &[S],
    t0: S,
    j: usize,
    cfg: &SolverConfig,
    opts: &FlowOptions<S>,
) -> Result<FlowResult<S>, SimError> {
    cfg.validate()?;
    if x0.len() != sys.state_dim() {
        return Err(SimError::Dimension {
            expected: sys.state_dim(),
            found: x0.len(),
        });
    }
    let tol: S = lit(cfg.tol_set);
    let c_tol = tol + opts.set_slack;
    let tol_event: S = lit(cfg.tol_event);
    let rel_tol: S = lit(cfg.rel_tol);
    let abs_tol: S = lit(cfg.abs_tol);
    let max_step: S = lit(cfg.max_step);
    let min_step: S = lit(cfg.min_step);
    let snap: S = lit(cfg.stop_snap);
    let check_d = opts.jump_entry != JumpEntry::Ignore;

    if !sys.in_flow_set(t0, j, x0, c_tol, Side::Flow)? {
        return Err(SimError::OutsideFlowSet { t: to_f64(t0) });
    }
    let f0 = sys.flow(t0, j, x0)?;
    let mut out = FlowResult {
        times: vec![t0],
        states: vec![x0.to_vec()],
        derivs: vec![f0.clone()],
        stop: FlowStop::ReachedHorizon,
    };
    let t_max = opts.t_max;
    if !(t_max > t0) {
        return Ok(out);
    }

    let system_stops = if opts.system_stops {
        sys.mandatory_stops()
    } else {
        Vec::new()
    };
    let mut stops: Vec<(S, StopKind)> = system_stops
        .into_iter()
        .chain(opts.stops.iter().copied())
        .filter(|&s| s > t0 && s < t_max)
        .map(|s| (s, StopKind::Mandatory))
        .collect();
    let d_at_start = check_d && sys.in_jump_set(t0, j, x0, tol, Side::Flow)?;
    if let (JumpEntry::Edge, Some(grid), true) = (opts.jump_entry, opts.grazing_grid, d_at_start) {
        let mut k = 1usize;
        loop {
            let s = t0 + grid * S::from_usize(k).unwrap();
            if s >= t_max {
                break;
            }
            stops.push((s, StopKind::Grazing));
            k += 1;
        }
    }
    stops.push((t_max, StopKind::Horizon));
    stops.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    stops.dedup_by(|a, b| a.0 == b.0);

    // D is armed once the flow has been outside it; a start in D that is
    // still in D at the first sample counts as "in D" (level), otherwise the
    // start is treated as a touch and the event is armed.
    let mut armed = !d_at_start;
    let mut first_sample = true;

    let mut t = t0;
    let mut x = x0.to_vec();
    let mut f = f0;
    let mut h = initial_step(&x, &f, rel_tol, abs_tol, max_step);
    let mut rhs = |tt: S, xx: &[S]| sys.flow(tt, j, xx);
    // previous step and its last two D-margin samples, for touches that
    // straddle a step boundary
    let mut last: Option<(Piece<S>, S, S)> = None;

    loop {
        let (next_stop, kind) = *stops.iter().find(|s| s.0 > t).expect("horizon is a stop");
        h = h.min(max_step);
        let mut landing = false;
        if t + h * lit(1.0001) >= next_stop {
            h = next_stop - t;
            landing = true;
        }
        let step = dopri_step(&mut rhs, t, &x, &f, h, rel_tol, abs_tol)?;
        if step.err > S::one() {
            h = h * step_factor(step.err);
            if h < min_step {
                return Err(SimError::StepUnderflow {
                    t: to_f64(t),
                    h: to_f64(h),
                });
            }
            continue;
        }
        let t_new = if landing { next_stop } else { t + h };
        let (ta, xa, fa) = (t, x.clone(), f.clone());
        let (xb, fb) = (step.x.clone(), step.f.clone());
        let span = t_new - ta;
        let at = |s: S| -> Vec<S> {
            if s >= t_new {
                return xb.clone();
            }
            if s <= ta {
                return xa.clone();
            }
            hermite(&xa, &fa, &xb, &fb, span, (s - ta) / span)
        };
        let in_c =
            |s: S| -> Result<bool, SimError> { sys.in_flow_set(s, j, &at(s), c_tol, Side::Flow) };
        let in_d = |s: S, band: S| -> Result<bool, SimError> {
            sys.in_jump_set(s, j, &at(s), band, Side::Flow)
        };

        // scan samples for the first event
        let mut prev = ta;
        let mut event: Option<(S, FlowStop)> = None;
        for q in [0.25, 0.5, 0.75, 1.0] {
            let s = if q == 1.0 { t_new } else { ta + span * lit(q) };
            let c_ok = in_c(s)?;
            let d_now = check_d && in_d(s, tol)?;
            if first_sample {
                first_sample = false;
                if d_at_start && d_now {
                    if opts.jump_entry == JumpEntry::Level {
                        out.stop = FlowStop::HitJumpSet;
                        return Ok(out);
                    }
                } else if d_at_start {
                    armed = true;
                    stops.retain(|st| st.1 != StopKind::Grazing);
                }
            }
            let d_event = check_d && armed && d_now;
            if !d_now {
                armed = true;
            }
            let mut t_d = None;
            let mut t_band = None;
            let mut t_c = None;
            if d_event {
                let band = bisect_first(prev, s, tol_event, |u| in_d(u, tol))?;
                // move to the first exact entry within this step
                let refined = if in_d(band, S::zero())? {
                    Some(band)
                } else {
                    first_in_step(band, t_new, tol_event, |u| in_d(u, S::zero()))?
                };
                t_d = Some(refined.unwrap_or(band));
                t_band = Some(band);
            }
            if !c_ok {
                let last_in = bisect_last(prev, s, tol_event, in_c)?;
                let margin = |u: S| sys.flow_margin(u, j, &at(u), Side::Flow);
                t_c = Some(
                    if margin(prev)? <= S::zero() && margin(last_in)? > S::zero() {
                        bisect_last(prev, last_in, tol_event, |u| Ok(margin(u)? <= S::zero()))?
                    } else {
                        last_in
                    },
                );
            }
            event = match (t_d, t_c) {
                // stop on the D side so the node can jump, even when C ends a hair earlier
                (Some(a), Some(b)) if a <= b + tol_event => Some((a, FlowStop::HitJumpSet)),
                // C ends on the tolerance band of D (e.g. C \ D): jump from the band
                (Some(_), Some(b)) if t_band.is_some_and(|d| d <= b + tol_event) => {
                    Some((t_band.unwrap(), FlowStop::HitJumpSet))
                }
                (Some(_), Some(b)) => Some((b, FlowStop::LeftFlowSet)),
                (Some(a), None) => Some((a, FlowStop::HitJumpSet)),
                (None, Some(b)) => Some((b, FlowStop::LeftFlowSet)),
                (None, None) => None,
            };
            if event.is_some() {
                break;
            }
            prev = s;
        }

        // a tangential touch of D can fall between samples: minimize m_D
        // around an interior minimum of the sampled margins
        let mut piece = Some(Piece {
            ta,
            tb: t_new,
            xa: xa.clone(),
            fa: fa.clone(),
            xb: xb.clone(),
            fb: fb.clone(),
        });
        let mut margins = None;
        if event.is_none() && check_d && armed {
            let cur = piece.as_ref().unwrap();
            let md = |p: &Piece<S>, u: S| sys.jump_margin(u, j, &p.at(u), Side::Flow);
            let ss = cur.samples();
            let mut m = [S::zero(); 5];
            for (k, &u) in ss.iter().enumerate() {
                m[k] = match (k, &last) {
                    (0, Some((_, _, m4))) => *m4,
                    _ => md(cur, u)?,
                };
            }
            let k = (0..5).fold(0, |b, i| if m[i] < m[b] { i } else { b });
            let mut hit: Option<(bool, S, S)> = None; // (in previous step, bracket start, touch)
            let mut consider =
                |prev_step: bool, p: &Piece<S>, lo: S, hi: S| -> Result<(), SimError> {
                    // a new entry only: the bracket must start outside D
                    if sys.in_jump_set(lo, j, &p.at(lo), tol, Side::Flow)? {
                        return Ok(());
                    }
                    let (u, v) = golden_min(lo, hi, tol_event, |u| md(p, u))?;
                    if v <= tol
                        && sys.in_jump_set(u, j, &p.at(u), tol, Side::Flow)?
                        && hit.is_none_or(|h| u < h.2)
                    {
                        hit = Some((prev_step, lo, u));
                    }
                    Ok(())
                };
            if (1..4).contains(&k) {
                consider(false, cur, ss[k - 1], ss[k + 1])?;
            } else if k == 0 {
                if let Some((p, m3, m4)) = &last {
                    if m3 > m4 {
                        consider(true, p, p.samples()[3], p.tb)?;
                    }
                }
                consider(false, cur, ss[0], ss[1])?;
            }
            if let Some((prev_step, lo, u)) = hit {
                let p = if prev_step {
                    &last.as_ref().unwrap().0
                } else {
                    cur
                };
                let band = bisect_first(lo, u, tol_event, |w| {
                    sys.in_jump_set(w, j, &p.at(w), tol, Side::Flow)
                })?;
                if prev_step {
                    // rewind the step that stepped over the touch
                    out.times.pop();
                    out.states.pop();
                    out.derivs.pop();
                    let x_ev = p.at(band);
                    let f_ev = sys.flow(band, j, &x_ev)?;
                    push(&mut out, band, x_ev, f_ev);
                    out.stop = FlowStop::HitJumpSet;
                    return Ok(out);
                }
                event = Some((band, FlowStop::HitJumpSet));
            }
            margins = Some((m[3], m[4]));
        }

        if let Some((t_ev, reason)) = event {
            // an event just before a mandatory stop is decided at the stop
            let defer = landing && kind == StopKind::Mandatory && next_stop - t_ev <= snap;
            if defer {
                push(&mut out, t_new, xb.clone(), fb.clone());
                out.stop = FlowStop::MandatoryStop;
                return Ok(out);
            }
            if t_ev > ta {
                let x_ev = at(t_ev);
                let f_ev = if t_ev == t_new {
                    fb.clone()
                } else {
                    sys.flow(t_ev, j, &x_ev)?
                };
                push(&mut out, t_ev, x_ev, f_ev);
            }
            out.stop = reason;
            return Ok(out);
        }

        last = margins.map(|(m3, m4)| (piece.take().unwrap(), m3, m4));
        push(&mut out, t_new, xb, fb);
        t = t_new;
        x = step.x;
        f = step.f;
        if landing {
            match kind {
                StopKind::Horizon => {
                    out.stop = FlowStop::ReachedHorizon;
                    return Ok(out);
                }
                StopKind::Mandatory | StopKind::Grazing => {
                    out.stop = FlowStop::MandatoryStop;
                    return Ok(out);
                }
            }
        }
        h = h * step_factor(step.err);
    }
}

/// One accepted step with its Hermite interpolant.
struct Piece<S> {
    ta: S,
    tb: S,
    xa: Vec<S>,
    fa: Vec<S>,
    xb: Vec<S>,
    fb: Vec<S>,
}

impl<S: Scalar> Piece<S> {
    fn at(&self, s: S) -> Vec<S> {
        if s >= self.tb {
            return self.xb.clone();
        }
        if s <= self.ta {
            return self.xa.clone();
        }
        let span = self.tb - self.ta;
        hermite(
            &self.xa,
            &self.fa,
            &self.xb,
            &self.fb,
            span,
            (s - self.ta) / span,
        )
    }

    fn samples(&self) -> [S; 5] {
        let span = self.tb - self.ta;
        [
            self.ta,
            self.ta + span * lit(0.25),
            self.ta + span * lit(0.5),
            self.ta + span * lit(0.75),
            self.tb,
        ]
    }
}

/// `(argmin, min)` of a unimodal `f` on `[a, b]` by golden-section search.
fn golden_min<S, F>(mut a: S, mut b: S, tol: S, f: F) -> Result<(S, S), SimError>
where
    S: Scalar,
    F: Fn(S) -> Result<S, SimError>,
{
    let g: S = lit(0.618_033_988_749_894_9);
    let (fa, fb) = (f(a)?, f(b)?);
    let mut best = if fa <= fb { (a, fa) } else { (b, fb) };
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    for _ in 0..200 {
        if b - a <= tol {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d)?;
        }
        for (t, v) in [(c, fc), (d, fd)] {
            if v < best.1 {
                best = (t, v);
            }
        }
    }
    Ok(best)
}

fn push<S: Scalar>(out: &mut FlowResult<S>, t: S, x: Vec<S>, f: Vec<S>) {
    out.times.push(t);
    out.states.push(x);
    out.derivs.push(f);
}

/// First time in `(a, b]` where `pred` holds, given `!pred(a)` and `pred(b)`.
fn bisect_first<S, P>(mut a: S, mut b: S, tol: S, pred: P) -> Result<S, SimError>
where
    S: Scalar,
    P: Fn(S) -> Result<bool, SimError>,
{
    while b - a > tol {
        let m = a + (b - a) * lit(0.5);
        if m <= a || m >= b {
            break;
        }
        if pred(m)? {
            b = m;
        } else {
            a = m;
        }
    }
    Ok(b)
}

/// Last time in `[a, b)` where `pred` holds, given `pred(a)` and `!pred(b)`.
fn bisect_last<S, P>(mut a: S, mut b: S, tol: S, pred: P) -> Result<S, SimError>
where
    S: Scalar,
    P: Fn(S) -> Result<bool, SimError>,
{
    while b - a > tol {
        let m = a + (b - a) * lit(0.5);
        if m <= a || m >= b {
            break;
        }
        if pred(m)? {
            a = m;
        } else {
            b = m;
        }
    }
    Ok(a)
}

/// First time in `(a, b]` where `pred` holds, scanning eight samples.
fn first_in_step<S, P>(a: S, b: S, tol: S, pred: P) -> Result<Option<S>, SimError>
where
    S: Scalar,
    P: Fn(S) -> Result<bool, SimError>,
{
    if !(b > a) {
        return Ok(None);
    }
    let n = 8;
    let mut prev = a;
    for k in 1..=n {
        let s = if k == n {
            b
        } else {
            a + (b - a) * S::from_usize(k).unwrap() / S::from_usize(n).unwrap()
        };
        if pred(s)? {
            return bisect_first(prev, s, tol, &pred).map(Some);
        }
        prev = s;
    }
    Ok(None)
}
