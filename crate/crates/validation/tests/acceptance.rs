//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use common::{arc, levels, oracle_margin, pair};
use hybridsim::builtins::{
    fore, fore_xi_perturbed, planar, planar_grazing_set, planar_xi, signal_n1a, signal_n1b,
    signal_na, signal_nb,
};
use hybridsim::closeness::{closeness_check, closeness_margin, WitnessSide};
use hybridsim::experiment::{run_experiment, ExperimentSpec};
use hybridsim::perturbation::PerturbedSystem;
use hybridsim::robustness::{
    probe_robustness, probe_strong_robustness, verify_implementation, ProbeQuery,
    RobustnessProbeConfig, Verdict,
};
use hybridsim::sim::{
    derive_flowing_first, derive_jumping_first, simulate, HybridDynamics, SolverConfig, Strategy,
};
use hybridsim::system::BoxRegion;
use hybridsim::{HybridArc64, PerturbationSignal64};
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn fore_first_jump(signal: PerturbationSignal64, delta: f64) -> (f64, Duration) {
    let start = Instant::now();
    let p = PerturbedSystem::new(fore(), signal, delta).unwrap();
    let cfg = SolverConfig::default().with_horizon(3.0, 5);
    let out = simulate(&p, &Strategy::JumpingFirst, &fore_xi_perturbed(delta), &cfg).unwrap();
    let t = out.arcs[0].arc.first_jump_time().unwrap_or(f64::NAN);
    (t, start.elapsed())
}

fn first_jump_criterion(signal: fn() -> PerturbationSignal64, target: f64) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for delta in [0.1, 0.01, 1e-6] {
        let (t, took) = fore_first_jump(signal(), delta);
        ok &= (t - target).abs() <= 0.01 && took < Duration::from_secs(10);
        parts.push(format!(
            "δ={delta:e}: t={t:.4} ({:.2}s)",
            took.as_secs_f64()
        ));
    }
    check(ok, format!("target {target} ± 0.01; {}", parts.join(", ")))
}

fn planar_run(sys: &dyn HybridDynamics<f64>, strategy: Strategy) -> HybridArc64 {
    let cfg = SolverConfig::default().with_horizon(3.0, 1);
    simulate(sys, &strategy, &planar_xi(), &cfg).unwrap().arcs[0]
        .arc
        .clone()
}

fn sup_error(a: &HybridArc64, j: usize, exact: impl Fn(f64) -> [f64; 2]) -> f64 {
    let (lo, hi) = a.level_span(j).unwrap();
    (0..=2000)
        .map(|k| lo + (hi - lo) * k as f64 / 2000.0)
        .chain(a.segment(j).unwrap().times.iter().copied())
        .map(|t| {
            let (x, e) = (a.eval(t, j).unwrap(), exact(t));
            (x[0] - e[0]).abs().max((x[1] - e[1]).abs())
        })
        .fold(0.0, f64::max)
}

fn planar_closed_forms() -> Outcome {
    let h = planar::<f64>();
    let c = planar_run(&h, Strategy::FlowingFirst);
    let d = planar_run(&h, Strategy::JumpingFirst);
    let ec = sup_error(&c, 0, |t| [t - 1.0, 1.0]);
    let jump = d.first_jump_time().unwrap_or(f64::NAN);
    let ed = sup_error(&d, 0, |t| [t - 1.0, 1.0]).max(sup_error(&d, 1, |t| [t - 1.0, 0.0]));
    let shape = c.max_j() == 0 && d.max_j() == 1;
    check(
        shape && ec <= 1e-8 && ed <= 1e-8 && (jump - 1.0).abs() <= 1e-8,
        format!("φ^C err {ec:.1e}, φ^D err {ed:.1e}, jump at {jump}"),
    )
}

fn planar_verdicts() -> Outcome {
    let h = planar::<f64>();
    let phi_c = planar_run(&h, Strategy::FlowingFirst);
    let phi_d = planar_run(&h, Strategy::JumpingFirst);
    let kicked = |s| {
        planar_run(
            &PerturbedSystem::new(planar(), s, 0.1).unwrap(),
            Strategy::JumpingFirst,
        )
    };
    let (n1a, n1b) = (kicked(signal_n1a()), kicked(signal_n1b()));
    let close =
        |a: &HybridArc64, b: &HybridArc64, t, eps| closeness_check(a, b, t, 1, eps).unwrap().close;
    let mut ok = true;
    for (t, eps) in [(3.0, 1e-3), (2.0, 0.5)] {
        ok &= close(&phi_c, &n1b, t, eps) && close(&phi_d, &n1a, t, eps);
    }
    let apart = closeness_check(&phi_d, &n1b, 2.0, 1, 0.5).unwrap();
    ok &= !apart.close && !close(&phi_c, &n1a, 2.0, 0.5);
    let w = apart.witness.as_ref();
    let witness_ok =
        w.is_some_and(|w| w.side == WitnessSide::AToB && w.j == 1 && w.missing_level());
    check(
        ok && witness_ok,
        format!(
            "n1b~φ^C, n1a~φ^D, φ^D≁n1b (witness j={:?}, missing level {:?})",
            w.map(|w| w.j),
            w.map(|w| w.missing_level())
        ),
    )
}

fn implementations_sound() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    let h = planar::<f64>();
    let mut ps = BoxRegion::cube(2, 3.0).sample_seeded(195, 21, |_| true);
    ps.extend([
        vec![-1.0, 1.0],
        vec![-2.5, 1.0],
        vec![0.0, 1.0],
        vec![0.5, 1.5],
        vec![-0.5, 2.0],
    ]);
    let f = fore::<f64>();
    let fs = BoxRegion::new(vec![-2.0, -2.0, -2.0, 0.0], vec![2.0, 2.0, 2.0, 0.5]).sample_seeded(
        200,
        22,
        |x| f.in_c(x, 1e-9) || f.in_d(x, 1e-9),
    );
    let cases = [
        (&h, ps, SolverConfig::default().with_horizon(3.0, 1)),
        (&f, fs, SolverConfig::default().with_horizon(2.0, 4)),
    ];
    for (sys, samples, cfg) in &cases {
        for hi in [derive_flowing_first(sys), derive_jumping_first(sys)] {
            let r = verify_implementation(&hi, sys, samples, cfg);
            let good = r.passed() && r.max_flow_residual <= 1e-6 && r.max_jump_residual <= 1e-9;
            ok &= good && r.samples == 200;
            parts.push(format!(
                "{}: {} (flow {:.1e}, jump {:.1e})",
                hi.name,
                if good { "ok" } else { "bad" },
                r.max_flow_residual,
                r.max_jump_residual
            ));
        }
    }
    check(ok, format!("200 samples each; {}", parts.join(", ")))
}

fn probe_cfg(k: Vec<Vec<f64>>) -> RobustnessProbeConfig<f64> {
    let mut c = RobustnessProbeConfig::new(
        k,
        vec![0.1, 0.01, 0.001],
        vec![signal_n1a(), signal_n1b()],
        vec![ProbeQuery {
            t: 3.0,
            j: 1,
            eps: 0.1,
        }],
        SolverConfig::default().with_horizon(3.0, 1),
    );
    c.init_ball_samples = 5;
    c.seed = 7;
    c
}

fn probes_consistent() -> Outcome {
    let h = planar::<f64>();
    let off = BoxRegion::cube(2, 3.0).sample_seeded(100, 5, |x| !planar_grazing_set(x, 1e-6));
    let on = vec![vec![-1.0, 1.0], vec![-2.0, 1.0], vec![-2.9, 1.0]];
    let mut ok = off.len() == 100;
    let mut parts = Vec::new();
    let strong_off = probe_strong_robustness(&h, &probe_cfg(off.clone())).unwrap();
    let strong_on = probe_strong_robustness(&h, &probe_cfg(on.clone())).unwrap();
    ok &= strong_off.verdict == Verdict::NoCounterexampleFound
        && strong_on.verdict == Verdict::CounterexampleFound;
    parts.push(format!(
        "strong: off X {:?}, on X {:?}",
        strong_off.verdict, strong_on.verdict
    ));
    for hi in [derive_flowing_first(&h), derive_jumping_first(&h)] {
        let a = probe_robustness(&hi, &probe_cfg(off.clone())).unwrap();
        let b = probe_robustness(&hi, &probe_cfg(on.clone())).unwrap();
        ok &= a.verdict == Verdict::NoCounterexampleFound
            && b.verdict == Verdict::CounterexampleFound;
        ok &= b
            .counterexample
            .as_ref()
            .is_some_and(|c| planar_grazing_set(&c.xi, 1e-9));
        parts.push(format!(
            "{}: off X {:?}, on X {:?}",
            hi.name, a.verdict, b.verdict
        ));
    }
    check(ok, parts.join("; "))
}

fn metric_suite() -> Outcome {
    let runner = || {
        TestRunner::new_with_rng(
            Config {
                cases: 50,
                failure_persistence: None,
                ..Config::default()
            },
            TestRng::deterministic_rng(RngAlgorithm::ChaCha),
        )
    };
    let mut failures = Vec::new();
    let mut record = |name: &str, r: Result<(), String>| {
        if let Err(e) = r {
            failures.push(format!("{name}: {e}"));
        }
    };
    record(
        "reflexive",
        runner()
            .run(
                &(levels(), 0.0..2.5f64, 0..3usize, 1e-9..1.0f64),
                |(a, t, j, eps)| {
                    let a = arc(&a);
                    assert!(closeness_check(&a, &a, t, j, eps).unwrap().close);
                    Ok(())
                },
            )
            .map_err(|e| e.to_string()),
    );
    record(
        "symmetric",
        runner()
            .run(
                &(pair(), 0.0..2.5f64, 0..3usize, 1e-3..1.0f64),
                |((a, b), t, j, eps)| {
                    let (a, b) = (arc(&a), arc(&b));
                    let ab = closeness_check(&a, &b, t, j, eps).unwrap().close;
                    assert_eq!(ab, closeness_check(&b, &a, t, j, eps).unwrap().close);
                    Ok(())
                },
            )
            .map_err(|e| e.to_string()),
    );
    record(
        "monotone",
        runner()
            .run(
                &(
                    pair(),
                    0.0..2.5f64,
                    0..3usize,
                    1e-3..1.0f64,
                    0.0..1.0f64,
                    0..3usize,
                    1.0..3.0f64,
                ),
                |((a, b), t, j, eps, st, sj, ge)| {
                    let (a, b) = (arc(&a), arc(&b));
                    if closeness_check(&a, &b, t, j, eps).unwrap().close {
                        assert!(
                            closeness_check(&a, &b, t * st, j.saturating_sub(sj), eps * ge)
                                .unwrap()
                                .close
                        );
                    }
                    Ok(())
                },
            )
            .map_err(|e| e.to_string()),
    );
    record(
        "oracle",
        runner()
            .run(&(pair(), 0.3..2.0f64, 0..2usize), |((la, lb), t, j)| {
                let m = closeness_margin(&arc(&la), &arc(&lb), t, j).unwrap();
                let o = oracle_margin(&la, &lb, t, j);
                assert!(
                    (m.is_infinite() && o.is_infinite()) || (m - o).abs() <= 0.01,
                    "margin {m} oracle {o}"
                );
                Ok(())
            })
            .map_err(|e| e.to_string()),
    );
    check(
        failures.is_empty(),
        if failures.is_empty() {
            "4 × 50 cases".into()
        } else {
            failures.join("; ")
        },
    )
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect()
}

fn deterministic_outputs() -> Outcome {
    let mut ok = true;
    let mut csvs = 0;
    for id in ["planar-fig2", "fore-na-sweep", "fore-nb-sweep"] {
        let spec = ExperimentSpec::builtin(id).unwrap();
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        run_experiment(&spec, Some(a.path())).unwrap();
        run_experiment(&spec, Some(b.path())).unwrap();
        let (fa, fb) = (files(a.path()), files(b.path()));
        csvs += fa.keys().filter(|k| k.ends_with(".csv")).count();
        ok &= fa == fb;
    }
    check(
        ok && csvs > 0,
        format!("{csvs} CSV files compared byte for byte"),
    )
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("fore n_a first jump", || {
            first_jump_criterion(signal_na, 1.0977)
        }),
        ("fore n_b first jump", || {
            first_jump_criterion(signal_nb, 1.4430)
        }),
        ("planar closed forms", planar_closed_forms),
        ("planar closeness verdicts", planar_verdicts),
        ("implementation soundness", implementations_sound),
        ("robustness probe consistency", probes_consistent),
        ("closeness metric suite", metric_suite),
        ("deterministic outputs", deterministic_outputs),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(d) => println!("PASS {name}: {d}"),
            Err(d) => {
                failed += 1;
                println!("FAIL {name}: {d}");
            }
        }
    }
    println!("{} of 8 criteria passed", 8 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
