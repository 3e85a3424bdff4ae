//! Dormand–Prince 5(4) step with embedded error estimate (FSAL).

use crate::scalar::{lit, Scalar};

use super::SimError;

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];

const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];

/// 5th-order minus embedded 4th-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

pub(crate) struct Step<S> {
    pub x: Vec<S>,
    /// Right-hand side at the new point (first stage of the next step).
    pub f: Vec<S>,
    /// Weighted RMS error; the step is acceptable when `<= 1`.
    pub err: S,
}

pub(crate) fn dopri_step<S, F>(
    rhs: &mut F,
    t: S,
    x: &[S],
    f0: &[S],
    h: S,
    rel_tol: S,
    abs_tol: S,
) -> Result<Step<S>, SimError>
where
    S: Scalar,
    F: FnMut(S, &[S]) -> Result<Vec<S>, SimError>,
{
    let n = x.len();
    let mut k: Vec<Vec<S>> = Vec::with_capacity(7);
    k.push(f0.to_vec());
    let mut xs = vec![S::zero(); n];
    for s in 1..7 {
        for i in 0..n {
            let mut acc = S::zero();
            for (m, km) in k.iter().enumerate() {
                let a = A[s][m];
                if a != 0.0 {
                    acc = acc + lit::<S>(a) * km[i];
                }
            }
            xs[i] = x[i] + h * acc;
        }
        k.push(rhs(t + h * lit(C[s]), &xs)?);
    }
    // stage 7 is evaluated at the 5th-order solution
    let x_new = xs;
    let f_new = k[6].clone();
    let mut sq = S::zero();
    for i in 0..n {
        let mut e = S::zero();
        for (m, km) in k.iter().enumerate() {
            if E[m] != 0.0 {
                e = e + lit::<S>(E[m]) * km[i];
            }
        }
        let sc = abs_tol + rel_tol * x[i].abs().max(x_new[i].abs());
        let r = h * e / sc;
        sq = sq + r * r;
    }
    let err = if n == 0 {
        S::zero()
    } else {
        (sq / S::from_usize(n).unwrap()).sqrt()
    };
    if !x_new.iter().all(|v| v.is_finite()) || !f_new.iter().all(|v| v.is_finite()) {
        return Err(SimError::NonFinite {
            t: crate::scalar::to_f64(t + h),
        });
    }
    Ok(Step {
        x: x_new,
        f: f_new,
        err,
    })
}

/// Step-size factor from the error estimate (safety 0.9, clamped to [0.2, 5]).
pub(crate) fn step_factor<S: Scalar>(err: S) -> S {
    let lo: S = lit(0.2);
    let hi: S = lit(5.0);
    if err <= S::zero() {
        return hi;
    }
    (lit::<S>(0.9) * err.powf(lit(-0.2))).max(lo).min(hi)
}

/// Initial step guess from the scale of the state and its derivative.
pub(crate) fn initial_step<S: Scalar>(x: &[S], f: &[S], rel_tol: S, abs_tol: S, max_step: S) -> S {
    let mut d0 = S::zero();
    let mut d1 = S::zero();
    for (&xi, &fi) in x.iter().zip(f) {
        let sc = abs_tol + rel_tol * xi.abs();
        d0 = d0 + (xi / sc) * (xi / sc);
        d1 = d1 + (fi / sc) * (fi / sc);
    }
    let h = if d0.sqrt() < lit(1e-5) || d1.sqrt() < lit(1e-5) {
        lit(1e-6)
    } else {
        lit::<S>(0.01) * d0.sqrt() / d1.sqrt()
    };
    h.min(max_step)
}
