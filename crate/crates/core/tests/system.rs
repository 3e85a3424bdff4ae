use hybridsim::builtins::{fore, planar, planar_xi};
use hybridsim::sim::{
    derive_flowing_first, derive_jumping_first, simulate, SolverConfig, Strategy,
};
use hybridsim::system::{
    audit_basic_conditions, check_uniqueness_conditions, BoxRegion, MarginFunction, SetSpec,
    UniquenessClass,
};
use proptest::prelude::*;

#[test]
fn builtins_pass_the_basic_conditions_audit() {
    let p = audit_basic_conditions(&planar::<f64>(), &BoxRegion::cube(2, 3.0), 2000, 1).unwrap();
    assert!(p.passed(), "{:?}", p.violations);
    assert!(p.samples_in_d > 0);
    let f = audit_basic_conditions(
        &fore::<f64>(),
        &BoxRegion::new(vec![-3.0, -3.0, -3.0, 0.0], vec![3.0, 3.0, 3.0, 1.0]),
        2000,
        1,
    )
    .unwrap();
    assert!(f.passed(), "{:?}", f.violations);
}

#[test]
fn uniqueness_conditions_fail_exactly_where_flows_and_jumps_compete() {
    let cfg = SolverConfig::default();
    let h = planar::<f64>();
    let pts = vec![
        vec![-1.0, 1.0],
        vec![-2.0, 0.0],
        vec![0.0, 2.0],
        vec![0.0, 1.0],
        vec![1.0, 2.0],
    ];
    let r = check_uniqueness_conditions(&h, &pts, 0.5, &cfg).unwrap();
    let holds: Vec<bool> = r.iter().map(|p| p.holds).collect();
    // the corner (0, 1) and the right edge of D (here (1, 2)) can both jump
    // and flow on in C
    assert_eq!(holds, vec![true, true, true, false, false]);
    assert!(matches!(
        r[1].class,
        UniquenessClass::FlowOnly {
            viable: true,
            flows_agree: true
        }
    ));
    assert_eq!(r[2].class, UniquenessClass::JumpOnly);
    assert!(matches!(r[4].class, UniquenessClass::Both { viable: true }));

    // the implementations restore uniqueness everywhere
    for hi in [derive_flowing_first(&h), derive_jumping_first(&h)] {
        let r = check_uniqueness_conditions(&hi, &pts, 0.5, &cfg).unwrap();
        assert!(r.iter().all(|p| p.holds), "{}: {r:?}", hi.name);
    }
}

#[test]
fn the_engine_is_generic_over_the_scalar() {
    let cfg = SolverConfig {
        rel_tol: 1e-5,
        abs_tol: 1e-6,
        tol_set: 1e-5,
        tol_event: 1e-5,
        stop_snap: 1e-4,
        res_tol: 1e-3,
        ..SolverConfig::default().with_horizon(3.0, 1)
    };
    let a = simulate(
        &planar::<f32>(),
        &Strategy::JumpingFirst,
        &planar_xi::<f32>(),
        &cfg,
    )
    .unwrap();
    let t = a.first().arc.first_jump_time().unwrap();
    assert!((t - 1.0).abs() < 1e-4, "{t}");
}

proptest! {
    #[test]
    fn membership_is_the_margin_sublevel_set(
        x in prop::collection::vec(-3.0..3.0f64, 2),
        a in prop::collection::vec(-2.0..2.0f64, 2),
        b in -1.0..1.0f64,
        c in prop::collection::vec(-2.0..2.0f64, 2),
        d in -1.0..1.0f64,
    ) {
        let tol = 1e-9;
        let p = MarginFunction::affine(a.clone(), b);
        let q = MarginFunction::affine(c.clone(), d);
        let lin = |w: &[f64], o: f64| w[0] * x[0] + w[1] * x[1] + o;
        prop_assert!((p.eval(&x) - lin(&a, b)).abs() < 1e-12);
        // stay clear of the band edge, where rounding decides
        prop_assume!((lin(&a, b) - tol).abs() > 1e-9 && (lin(&c, d) - tol).abs() > 1e-9);
        prop_assume!((lin(&a, b) + tol).abs() > 1e-9);
        let both = SetSpec::from_margin(MarginFunction::max_of(vec![p.clone(), q.clone()]));
        let either = SetSpec::from_margin(MarginFunction::min_of(vec![p.clone(), q.clone()]));
        let (in_p, in_q) = (lin(&a, b) <= tol, lin(&c, d) <= tol);
        prop_assert_eq!(both.contains(&x, tol), in_p && in_q);
        prop_assert_eq!(either.contains(&x, tol), in_p || in_q);
        prop_assert_eq!(SetSpec::from_margin(p.negate()).contains(&x, tol), -lin(&a, b) <= tol);
        prop_assert!(!SetSpec::from_margin(MarginFunction::<f64>::empty()).contains(&x, tol));
        prop_assert!(SetSpec::from_margin(MarginFunction::<f64>::everywhere()).contains(&x, tol));
    }

    #[test]
    fn implementations_partition_the_domain(x in prop::collection::vec(-3.0..3.0f64, 2)) {
        let tol = 1e-9;
        let h = planar::<f64>();
        let hd = derive_jumping_first(&h);
        let hc = derive_flowing_first(&h);
        // H^D never flows inside D; H^C never jumps where H can flow
        if h.in_d(&x, tol) {
            prop_assert!(!hd.in_c(&x, tol));
        }
        prop_assert_eq!(hd.in_d(&x, tol), h.in_d(&x, tol));
        prop_assert_eq!(hc.in_c(&x, tol), h.in_c(&x, tol));
        prop_assert!(!(hc.in_d(&x, tol) && hc.in_c(&x, tol) && h.viability_override.as_ref().unwrap()(&x)));
    }
}
