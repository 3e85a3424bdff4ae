//! Metric properties of closeness and agreement with a brute-force oracle.

mod common;

use common::{arc, levels, oracle_margin, pair};
use hybridsim::closeness::{closeness_check, closeness_margin};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn reflexive(a in levels(), t in 0.0..2.5f64, j in 0..3usize, eps in 1e-9..1.0f64) {
        let a = arc(&a);
        prop_assert!(closeness_check(&a, &a, t, j, eps).unwrap().close);
        prop_assert_eq!(closeness_margin(&a, &a, t, j).unwrap(), 0.0);
    }

    #[test]
    fn symmetric((a, b) in pair(), t in 0.0..2.5f64, j in 0..3usize, eps in 1e-3..1.0f64) {
        let (a, b) = (arc(&a), arc(&b));
        prop_assert_eq!(
            closeness_check(&a, &b, t, j, eps).unwrap().close,
            closeness_check(&b, &a, t, j, eps).unwrap().close
        );
        let (m1, m2) = (closeness_margin(&a, &b, t, j).unwrap(), closeness_margin(&b, &a, t, j).unwrap());
        prop_assert!(m1 == m2, "{} vs {}", m1, m2);
    }

    #[test]
    fn monotone_in_t_j_and_eps(
        (a, b) in pair(),
        t in 0.0..2.5f64,
        j in 0..3usize,
        eps in 1e-3..1.0f64,
        shrink_t in 0.0..1.0f64,
        shrink_j in 0..3usize,
        grow_eps in 1.0..3.0f64,
    ) {
        let (a, b) = (arc(&a), arc(&b));
        if closeness_check(&a, &b, t, j, eps).unwrap().close {
            let (t2, j2, e2) = (t * shrink_t, j.saturating_sub(shrink_j), eps * grow_eps);
            prop_assert!(closeness_check(&a, &b, t2, j2, e2).unwrap().close);
            prop_assert!(closeness_check(&a, &b, t2, j, eps).unwrap().close);
            prop_assert!(closeness_check(&a, &b, t, j2, eps).unwrap().close);
            prop_assert!(closeness_check(&a, &b, t, j, e2).unwrap().close);
        }
    }

    #[test]
    fn margin_is_the_verdict_threshold((a, b) in pair(), t in 0.0..2.5f64, j in 0..2usize) {
        let (a, b) = (arc(&a), arc(&b));
        let m = closeness_margin(&a, &b, t, j).unwrap();
        if m.is_finite() {
            prop_assert!(closeness_check(&a, &b, t, j, m + 1e-6).unwrap().close);
            if m > 1e-6 {
                prop_assert!(!closeness_check(&a, &b, t, j, m - 1e-6).unwrap().close);
            }
        } else {
            prop_assert!(!closeness_check(&a, &b, t, j, 1e6).unwrap().close);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn agrees_with_dense_grid_oracle((la, lb) in pair(), t in 0.3..2.0f64, j in 0..2usize, eps in 0.01..0.8f64) {
        let (a, b) = (arc(&la), arc(&lb));
        let m = closeness_margin(&a, &b, t, j).unwrap();
        let o = oracle_margin(&la, &lb, t, j);
        if o.is_infinite() || m.is_infinite() {
            prop_assert!(o.is_infinite() && m.is_infinite(), "margin {} oracle {}", m, o);
            prop_assert!(!closeness_check(&a, &b, t, j, eps).unwrap().close);
        } else {
            prop_assert!((m - o).abs() <= 0.01, "margin {} oracle {}", m, o);
            if (o - eps).abs() > 0.02 {
                prop_assert_eq!(closeness_check(&a, &b, t, j, eps).unwrap().close, o < eps, "margin {} oracle {} eps {}", m, o, eps);
            }
        }
    }
}
