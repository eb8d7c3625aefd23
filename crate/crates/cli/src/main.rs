mod args;

use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use serde::Serialize;
use serde_json::json;

use shellmg::experiment::{Preconditioning, Problem, ProblemConfig, TestCase};
use shellmg::geometry::{GridHierarchy, MAX_LEVEL};
use shellmg::krylov::{SolverConfig, SolverKind};
use shellmg::multigrid::{CoarseSolve, CycleConfig};
use shellmg::profiles::{OperatorParameters, PhysicalConstants};
use shellmg::relaxation::SmootherConfig;
use shellmg::theory::{run_theory_checks, TheoryConfig};
use shellmg::timing::{timing_sweep, TimingProtocol};
use shellmg::{par, Error};

use args::{Cli, Command, GridInfoArgs, PrecArg, ProblemArgs, SmootherArg, SolveArgs, SolverArg, TestCaseArg, TimingArgs, VerifyArgs};

const FORMAT_VERSION: u32 = 1;
const EXIT_CHECKS_FAILED: u8 = 1;
const EXIT_CONFIG: u8 = 4;

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(_) | Error::Json(_) | Error::SingularSystem { .. } | Error::NotPositiveDefinite(_) => {
                Failure::Runtime(e.to_string())
            }
            _ => Failure::Config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_CONFIG) } else { ExitCode::SUCCESS };
        }
    };
    let threads = cli.threads;
    let outcome = par::with_threads(threads, move || match cli.command {
        Command::Solve(a) => solve(&a, threads),
        Command::Timing(a) => timing(&a, threads),
        Command::Verify(a) => verify(&a),
        Command::GridInfo(a) => grid_info(&a),
    });
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), Failure> {
    if cond {
        Ok(())
    } else {
        Err(Failure::Config(msg()))
    }
}

fn solver_kind(s: SolverArg) -> SolverKind {
    match s {
        SolverArg::Richardson => SolverKind::Richardson,
        SolverArg::Bicgstab => SolverKind::Bicgstab,
    }
}

/// Validates everything that does not need the grid.
fn problem_config(a: &ProblemArgs) -> Result<ProblemConfig, Failure> {
    let constants = PhysicalConstants::default();
    check(a.levels <= MAX_LEVEL, || format!("--levels must be at most {MAX_LEVEL}, got {}", a.levels))?;
    check(a.nr >= 1, || "--nr must be positive".into())?;
    check(a.mu_cycles >= 1, || "--mu-cycles must be at least 1".into())?;
    check(a.courant > 0.0 && a.courant.is_finite(), || format!("--courant must be positive, got {}", a.courant))?;
    check(a.relax > 0.0 && a.relax < 2.0, || format!("--relax must lie in (0, 2), got {}", a.relax))?;
    let buoyancy = a.buoyancy.unwrap_or_else(|| constants.n_star());
    check(buoyancy.is_finite() && buoyancy >= constants.n_star() * (1.0 - 1e-9), || {
        format!("--N must be at least {:.6} 1/s, got {buoyancy}", constants.n_star())
    })?;
    let coarse = match a.coarse.as_str() {
        "direct" => CoarseSolve::Direct,
        n => match n.parse::<usize>() {
            Ok(s) if s > 0 => CoarseSolve::Sweeps(s),
            _ => return Err(Failure::Config(format!("--coarse must be `direct` or a positive sweep count, got `{n}`"))),
        },
    };
    let test_case = match (a.test_case, &a.profiles) {
        (TestCaseArg::BalancedFlow, None) => TestCase::BalancedFlow,
        (TestCaseArg::BalancedFlow, Some(_)) => {
            return Err(Failure::Config("--profiles needs --test-case external-profiles".into()))
        }
        (TestCaseArg::ExternalProfiles, Some(p)) => TestCase::ExternalProfiles(p.clone()),
        (TestCaseArg::ExternalProfiles, None) => {
            return Err(Failure::Config("--test-case external-profiles needs --profiles".into()))
        }
    };
    let smoother = match a.smoother {
        SmootherArg::Sor => SmootherConfig::sor(a.relax),
        SmootherArg::Jacobi => SmootherConfig::jacobi(a.relax),
    };
    Ok(ProblemConfig {
        levels: a.levels,
        n_r: a.nr,
        buoyancy,
        courant: a.courant,
        test_case,
        preconditioner: match a.prec {
            PrecArg::Full => Preconditioning::Full,
            PrecArg::Factorized => Preconditioning::Factorized,
            PrecArg::Partial => Preconditioning::Partial,
            PrecArg::None => Preconditioning::None,
        },
        preconditioner_profiles: a.prec_profiles.clone(),
        cycle: CycleConfig { pre_sweeps: a.nu_pre, post_sweeps: a.nu_post, coarse, smoother, ..Default::default() },
        mu_cycles: a.mu_cycles,
        seed: a.seed,
        constants,
        ..Default::default()
    })
}

fn write_json(dir: &Path, name: &str, value: &serde_json::Value) -> Result<(), Failure> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn solve(a: &SolveArgs, threads: usize) -> Result<u8, Failure> {
    let config = problem_config(&a.problem)?;
    check(a.tol > 0.0 && a.tol.is_finite(), || format!("--tol must be positive, got {}", a.tol))?;
    check(a.max_iter >= 1, || "--max-iter must be at least 1".into())?;
    let solver = SolverConfig { solver: solver_kind(a.solver), tol: a.tol, max_iter: a.max_iter };
    let problem = Problem::build(&config)?;
    let start = Instant::now();
    let (_, history) = problem.solve(&solver, config.mu_cycles)?;
    let solve_seconds = start.elapsed().as_secs_f64();

    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join("history.csv"), history.to_csv())?;
    let summary = json!({
        "format_version": FORMAT_VERSION,
        "config": a,
        "threads": threads,
        "parallel_kernels": par::is_parallel(),
        "buoyancy": config.buoyancy,
        "epsilon": (config.buoyancy / config.constants.n_star()).powi(2) - 1.0,
        "omega": problem.params.omega,
        "status": history.status,
        "iterations": history.iterations,
        "final_relative_residual": history.final_relative_residual(),
        "rho_a": history.rate(),
        "preconditioner_applications": history.preconditioner_applications,
        "operator_applications": history.operator_applications,
        "seconds": {
            "assembly": problem.times.assembly,
            "hierarchy": problem.times.hierarchy,
            "solve": solve_seconds,
        },
    });
    write_json(&a.out, "summary.json", &summary)?;
    println!(
        "{:?} after {} iterations, relative residual {:.3e}, rate {:.3}",
        history.status,
        history.iterations,
        history.final_relative_residual(),
        history.rate()
    );
    Ok(history.status.exit_code() as u8)
}

fn timing(a: &TimingArgs, threads: usize) -> Result<u8, Failure> {
    let config = problem_config(&a.problem)?;
    check(a.repetitions >= 1, || "--repetitions must be at least 1".into())?;
    check(a.nr_list.iter().all(|&n| n >= 1), || "--nr-list entries must be positive".into())?;
    let protocol = TimingProtocol { warmups: a.warmups, repetitions: a.repetitions };
    let model = timing_sweep(&config, &a.nr_list, solver_kind(a.solver), protocol)?;
    let report = json!({
        "format_version": FORMAT_VERSION,
        "config": a,
        "threads": threads,
        "model": model,
        "intercept_share_at_128": model.intercept_share(128),
    });
    write_json(&a.out, "timing.json", &report)?;
    println!(
        "t = {:.3e} s + {:.3e} s × n_r, R² = {:.4}, intercept share at n_r = 128: {:.1}%",
        model.intercept,
        model.slope,
        model.r_squared,
        100.0 * model.intercept_share(128)
    );
    Ok(0)
}

fn verify(a: &VerifyArgs) -> Result<u8, Failure> {
    check(a.mu_cycles >= 1, || "--mu-cycles must be at least 1".into())?;
    let config = TheoryConfig {
        decoupling_level: a.levels,
        perturbation_level: a.perturbation_level,
        n_r: a.nr,
        courant: a.courant,
        cycles: a.mu_cycles,
        perturbation_epsilons: a.epsilons.clone(),
        control_epsilon: a.control_epsilon,
        seed: a.seed,
    };
    let report = run_theory_checks(&config)?;
    write_json(&a.out, "theory.json", &json!({ "format_version": FORMAT_VERSION, "config": a, "report": report }))?;
    for c in &report.checks {
        let verdict = match (c.pass, c.warning) {
            (true, false) => "pass",
            (true, true) => "warning: outside the theory",
            (false, _) => "FAIL",
        };
        println!("{:<45} {:>12.4e}  {verdict}", c.name, c.value);
    }
    Ok(if report.pass { 0 } else { EXIT_CHECKS_FAILED })
}

#[derive(Serialize)]
struct OmegaInfo {
    courant: f64,
    omega: f64,
    mu_dt: f64,
}

fn grid_info(a: &GridInfoArgs) -> Result<u8, Failure> {
    check(a.levels <= MAX_LEVEL, || format!("--levels must be at most {MAX_LEVEL}, got {}", a.levels))?;
    let grids = GridHierarchy::build(a.levels)?;
    let params = OperatorParameters::for_courant(10.0, grids.finest(), &PhysicalConstants::default())?;
    let fingerprints: Vec<String> = grids.grids.iter().map(|g| g.fingerprint()).collect();
    let out = json!({
        "summary": grids.summary(),
        "fingerprints": fingerprints,
        "default_operator": OmegaInfo { courant: 10.0, omega: params.omega, mu_dt: params.mu_dt },
    });
    // A closed pipe downstream is not an error worth reporting.
    let _ = writeln!(std::io::stdout().lock(), "{}", serde_json::to_string_pretty(&out)?);
    Ok(0)
}
