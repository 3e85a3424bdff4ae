//! `hybridsim`: simulate, compare and probe hybrid systems from the command line.
//!
//! Exit codes: 0 success, 1 counterexample found (or verification failed),
//! 2 usage/config error, 3 numeric failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use hybridsim::arc::HybridArc;
use hybridsim::builtins::{builtin_signal, builtin_system, list_builtins};
use hybridsim::closeness::{closeness_check, closeness_margin};
use hybridsim::experiment::{
    run_experiment, ExperimentSpec, Implementation, ProbeSpec, BUILTIN_EXPERIMENTS,
};
use hybridsim::perturbation::PerturbedSystem;
use hybridsim::robustness::{
    probe_robustness, probe_strong_robustness, verify_implementation, ProbeKind, ProbeQuery,
    RobustnessProbeConfig, Verdict,
};
use hybridsim::sim::{is_solution, simulate, HybridDynamics, SolverConfig, Strategy};
use hybridsim::system::{BoxRegion, HybridSystem};
use hybridsim::Error;

#[derive(Parser)]
#[command(
    name = "hybridsim",
    version,
    about = "Hybrid system simulation and robustness probes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    JumpingFirst,
    FlowingFirst,
    EnumerateAll,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::JumpingFirst => Strategy::JumpingFirst,
            StrategyArg::FlowingFirst => Strategy::FlowingFirst,
            StrategyArg::EnumerateAll => Strategy::EnumerateAll,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ImplArg {
    Original,
    JumpingFirst,
    FlowingFirst,
}

impl From<ImplArg> for Implementation {
    fn from(i: ImplArg) -> Self {
        match i {
            ImplArg::Original => Implementation::Original,
            ImplArg::JumpingFirst => Implementation::JumpingFirst,
            ImplArg::FlowingFirst => Implementation::FlowingFirst,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Robustness,
    Strong,
}

#[derive(clap::Args)]
struct Horizon {
    /// Time horizon.
    #[arg(long = "T")]
    t: Option<f64>,
    /// Jump horizon.
    #[arg(long = "J")]
    j: Option<usize>,
}

impl Horizon {
    fn apply(&self, mut cfg: SolverConfig) -> SolverConfig {
        if let Some(t) = self.t {
            cfg.horizon_t = t;
        }
        if let Some(j) = self.j {
            cfg.horizon_j = j;
        }
        cfg
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one run, or a whole experiment with --config.
    Simulate {
        /// Experiment spec: a JSON file or a built-in experiment id.
        #[arg(long, conflicts_with_all = ["system", "xi"])]
        config: Option<String>,
        #[arg(long, required_unless_present = "config")]
        system: Option<String>,
        #[arg(long = "impl", value_enum, default_value = "original")]
        implementation: ImplArg,
        #[arg(long, value_enum, default_value = "jumping-first")]
        strategy: StrategyArg,
        /// Initial state, comma separated.
        #[arg(long, allow_hyphen_values = true, required_unless_present = "config")]
        xi: Option<String>,
        #[arg(long, requires = "delta")]
        signal: Option<String>,
        #[arg(long, requires = "signal")]
        delta: Option<f64>,
        #[command(flatten)]
        horizon: Horizon,
        /// Output directory (default: CSV of the first arc on stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// (T, J, ε)-closeness of two arc JSON files.
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long = "T")]
        t: f64,
        #[arg(long = "J")]
        j: usize,
        #[arg(long)]
        eps: f64,
    },
    /// Falsification probe for (strong) robustness.
    Probe {
        /// Probe spec JSON file.
        #[arg(long, conflicts_with_all = ["system", "xi"])]
        config: Option<PathBuf>,
        #[arg(long, required_unless_present = "config")]
        system: Option<String>,
        #[arg(long = "impl", value_enum, default_value = "original")]
        implementation: ImplArg,
        #[arg(long, value_enum, default_value = "robustness")]
        kind: KindArg,
        /// Sample of K; repeat for more points.
        #[arg(long, allow_hyphen_values = true, required_unless_present = "config")]
        xi: Vec<String>,
        #[arg(long)]
        signal: Vec<String>,
        #[arg(long)]
        delta: Vec<f64>,
        #[command(flatten)]
        horizon: Horizon,
        #[arg(long, default_value_t = 0.1)]
        eps: f64,
        /// Points sampled in each ball ξ + δ𝔹.
        #[arg(long, default_value_t = 1)]
        ball: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for report.json and counterexample CSVs.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check that an implementation of a system is deterministic and sound.
    VerifyImpl {
        #[arg(long)]
        system: String,
        #[arg(long = "impl", value_enum)]
        implementation: ImplArg,
        /// Explicit samples; repeat for more points.
        #[arg(long, allow_hyphen_values = true)]
        xi: Vec<String>,
        /// Random samples in the cube [-radius, radius]^n (kept if in C ∪ D).
        #[arg(long, default_value_t = 0)]
        samples: usize,
        #[arg(long, default_value_t = 3.0)]
        radius: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        horizon: Horizon,
    },
    /// Built-in systems, signals and experiments.
    List,
}

enum Failure {
    Usage(String),
    Numeric(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let numeric = match &e {
            Error::Sim(_) => true,
            Error::Experiment(x) => x.is_numeric(),
            Error::Robustness(hybridsim::robustness::RobustnessError::Sim(_)) => true,
            _ => false,
        };
        if numeric {
            Failure::Numeric(e.to_string())
        } else {
            Failure::Usage(e.to_string())
        }
    }
}

type Outcome = Result<ExitCode, Failure>;

fn usage(m: impl Into<String>) -> Failure {
    Failure::Usage(m.into())
}

fn parse_vec(s: &str) -> Result<Vec<f64>, Failure> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| usage(format!("cannot parse {v:?} in {s:?}")))
        })
        .collect()
}

fn system(id: &str, imp: ImplArg, cfg: &SolverConfig) -> Result<HybridSystem<f64>, Failure> {
    let h = builtin_system::<f64>(id)
        .ok_or_else(|| usage(format!("unknown system {id:?} (see `hybridsim list`)")))?;
    Ok(Implementation::from(imp).apply(&h, cfg))
}

fn write(path: &Path, body: &str) -> Result<(), Failure> {
    fs::write(path, body).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn mkdir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| usage(format!("{}: {e}", dir.display())))
}

// a closed pipe (`| head`) is not an error worth a panic
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let _ = write!(std::io::stdout().lock(), $($arg)*);
    }};
}

macro_rules! outln {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(2),
            };
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Numeric(m)) => {
            eprintln!("numeric failure: {m}");
            ExitCode::from(3)
        }
    }
}

fn run(cmd: Command) -> Outcome {
    match cmd {
        Command::Simulate {
            config: Some(cfg),
            out,
            ..
        } => simulate_experiment(&cfg, out.as_deref()),
        Command::Simulate {
            system: Some(id),
            implementation,
            strategy,
            xi: Some(xi),
            signal,
            delta,
            horizon,
            out,
            ..
        } => simulate_one(
            &id,
            implementation,
            strategy,
            &xi,
            signal.zip(delta),
            &horizon,
            out.as_deref(),
        ),
        Command::Simulate { .. } => Err(usage("simulate needs --config or --system and --xi")),
        Command::Compare { a, b, t, j, eps } => compare(&a, &b, t, j, eps),
        Command::Probe {
            config: Some(path),
            out,
            ..
        } => {
            let text =
                fs::read_to_string(&path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            let spec = ProbeSpec::from_json(&text).map_err(Error::from)?;
            let report = spec.run()?;
            finish_probe(report, out.as_deref())
        }
        Command::Probe {
            system: Some(id),
            implementation,
            kind,
            xi,
            signal,
            delta,
            horizon,
            eps,
            ball,
            seed,
            out,
            ..
        } => {
            let solver = horizon.apply(SolverConfig::default());
            let h = system(&id, implementation, &solver)?;
            let k = xi
                .iter()
                .map(|s| parse_vec(s))
                .collect::<Result<Vec<_>, _>>()?;
            if signal.is_empty() || delta.is_empty() {
                return Err(usage("probe needs at least one --signal and one --delta"));
            }
            let signals = signal
                .iter()
                .map(|s| {
                    builtin_signal(s, h.state_dim).ok_or_else(|| {
                        usage(format!(
                            "unknown signal {s:?} for {id} (see `hybridsim list`)"
                        ))
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            let query = ProbeQuery {
                t: solver.horizon_t,
                j: solver.horizon_j,
                eps,
            };
            let mut cfg = RobustnessProbeConfig::new(k, delta, signals, vec![query], solver);
            cfg.init_ball_samples = ball;
            cfg.seed = seed;
            let report = match kind {
                KindArg::Robustness => probe_robustness(&h, &cfg),
                KindArg::Strong => probe_strong_robustness(&h, &cfg),
            }
            .map_err(Error::from)?;
            finish_probe(report, out.as_deref())
        }
        Command::Probe { .. } => Err(usage("probe needs --config or --system and --xi")),
        Command::VerifyImpl {
            system: id,
            implementation,
            xi,
            samples,
            radius,
            seed,
            horizon,
        } => {
            let cfg = horizon.apply(SolverConfig::default());
            let h = system(&id, ImplArg::Original, &cfg)?;
            let h_i = system(&id, implementation, &cfg)?;
            let mut pts = xi
                .iter()
                .map(|s| parse_vec(s))
                .collect::<Result<Vec<_>, _>>()?;
            if pts.iter().any(|p| p.len() != h.state_dim) {
                return Err(usage(format!(
                    "samples must have dimension {}",
                    h.state_dim
                )));
            }
            pts.extend(
                BoxRegion::cube(h.state_dim, radius)
                    .sample_seeded(samples, seed, |x| h.in_c(x, 1e-9) || h.in_d(x, 1e-9)),
            );
            if pts.is_empty() {
                return Err(usage("verify-impl needs --xi or --samples"));
            }
            let rep = verify_implementation(&h_i, &h, &pts, &cfg);
            outln!("{}", json(&rep));
            Ok(if rep.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
        Command::List => {
            outln!("{}", json(&list_builtins()));
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn simulate_experiment(cfg: &str, out: Option<&Path>) -> Outcome {
    let spec = match ExperimentSpec::builtin(cfg) {
        Some(s) => s,
        None if Path::new(cfg).exists() => {
            ExperimentSpec::load(Path::new(cfg)).map_err(Error::from)?
        }
        None => {
            let ids: Vec<_> = BUILTIN_EXPERIMENTS.iter().map(|(id, _)| *id).collect();
            return Err(usage(format!(
                "{cfg:?} is neither a file nor a built-in experiment {ids:?}"
            )));
        }
    };
    let bundle = run_experiment(&spec, out).map_err(Error::from)?;
    out!("{}", bundle.summary);
    Ok(ExitCode::SUCCESS)
}

fn simulate_one(
    id: &str,
    imp: ImplArg,
    strategy: StrategyArg,
    xi: &str,
    perturbation: Option<(String, f64)>,
    horizon: &Horizon,
    out: Option<&Path>,
) -> Outcome {
    let cfg = horizon.apply(SolverConfig::default());
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let h = system(id, imp, &cfg)?;
    let xi = parse_vec(xi)?;
    if xi.len() != h.state_dim {
        return Err(usage(format!("--xi must have {} components", h.state_dim)));
    }
    let perturbed = match &perturbation {
        Some((sig, d)) => {
            let s = builtin_signal(sig, h.state_dim).ok_or_else(|| {
                usage(format!(
                    "unknown signal {sig:?} for {id} (see `hybridsim list`)"
                ))
            })?;
            Some(PerturbedSystem::new(h.clone(), s, *d).map_err(|e| usage(e.to_string()))?)
        }
        None => None,
    };
    let sys: &dyn HybridDynamics<f64> = match &perturbed {
        Some(p) => p,
        None => &h,
    };
    let strategy = Strategy::from(strategy);
    let outcome =
        simulate(sys, &strategy, &xi, &cfg).map_err(|e| Failure::Numeric(e.to_string()))?;
    for a in &outcome.arcs {
        let rep = is_solution(&a.arc, sys, &cfg).map_err(|e| Failure::Numeric(e.to_string()))?;
        if !rep.passed() {
            return Err(Failure::Numeric(format!(
                "simulated arc fails the solution check (flow residual {:e}, jump residual {:e})",
                rep.flow_residual, rep.jump_residual
            )));
        }
    }
    let Some(dir) = out else {
        out!("{}", outcome.first().arc.to_csv());
        return Ok(ExitCode::SUCCESS);
    };
    mkdir(dir)?;
    let many = outcome.arcs.len() > 1;
    for (k, a) in outcome.arcs.iter().enumerate() {
        let stem = if many {
            format!("arc-b{k}")
        } else {
            "arc".to_string()
        };
        write(&dir.join(format!("{stem}.csv")), &a.arc.to_csv())?;
        write(&dir.join(format!("{stem}.json")), &a.arc.to_json())?;
        let meta = serde_json::json!({
            "system": h.name,
            "strategy": strategy.id(),
            "xi": xi,
            "delta": perturbation.as_ref().map_or(0.0, |p| p.1),
            "signal": perturbation.as_ref().map(|p| p.0.clone()),
            "jump_times": a.arc.jump_times(),
            "stop_reason": a.end,
        });
        write(&dir.join(format!("{stem}.meta.json")), &json(&meta))?;
    }
    outln!("{} arc(s) written to {}", outcome.arcs.len(), dir.display());
    Ok(ExitCode::SUCCESS)
}

fn load_arc(path: &Path) -> Result<HybridArc<f64>, Failure> {
    let text = fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    HybridArc::from_json(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn compare(a: &Path, b: &Path, t: f64, j: usize, eps: f64) -> Outcome {
    let (a, b) = (load_arc(a)?, load_arc(b)?);
    let verdict = closeness_check(&a, &b, t, j, eps).map_err(|e| usage(e.to_string()))?;
    let margin = closeness_margin(&a, &b, t, j).map_err(|e| usage(e.to_string()))?;
    let v = serde_json::json!({
        "verdict": verdict,
        // infinite when a level is missing on one side
        "margin": if margin.is_finite() { serde_json::json!(margin) } else { serde_json::json!(null) },
    });
    outln!("{}", json(&v));
    Ok(ExitCode::SUCCESS)
}

fn finish_probe(report: hybridsim::robustness::ProbeReport<f64>, out: Option<&Path>) -> Outcome {
    let body = json(&report);
    outln!("{body}");
    if let Some(dir) = out {
        mkdir(dir)?;
        write(&dir.join("report.json"), &body)?;
        if let Some(cx) = &report.counterexample {
            write(
                &dir.join("counterexample-subject.csv"),
                &cx.subject.to_csv(),
            )?;
            for (k, c) in cx.candidates.iter().enumerate() {
                write(
                    &dir.join(format!("counterexample-candidate-{k}.csv")),
                    &c.to_csv(),
                )?;
            }
        }
    }
    let kind = match report.kind {
        ProbeKind::Robustness => "robustness",
        ProbeKind::StrongRobustness => "strong robustness",
    };
    Ok(match report.verdict {
        Verdict::CounterexampleFound => {
            eprintln!("{kind}: counterexample found");
            ExitCode::from(1)
        }
        Verdict::NoCounterexampleFound => {
            eprintln!("{kind}: no counterexample found (not a proof of robustness)");
            ExitCode::SUCCESS
        }
    })
}
