use std::error::Error as StdError;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use ccplan::solver::{backend_by_name, backend_from_env, compare_bounds, solve_ccp, ConicBackend};
use ccplan::unimodality::UnimodalityConfig;
use ccplan::validation::{constraint_unimodality, measure_satisfaction, SatisfactionReport};
use ccplan::{BoundKind, PlanSolution, Reformulation, Scenario, ScenarioFile};
use clap::{Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::Serialize;

type CliResult = Result<ExitCode, Box<dyn StdError>>;

const EXIT_FLAGGED: u8 = 2;

#[derive(Parser)]
#[command(name = "ccplan", version, about = "Chance-constrained multi-vehicle planner")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a scenario and write the plan.
    Plan {
        scenario: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Override the bound named in the scenario.
        #[arg(long)]
        bound: Option<BoundArg>,
        /// Conic backend; defaults to $CCPLAN_BACKEND or clarabel.
        #[arg(long)]
        backend: Option<String>,
    },
    /// Monte Carlo check of a plan's joint constraint satisfaction.
    Validate {
        scenario: PathBuf,
        solution: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        /// Defaults to the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Empirical unimodality check of every sampled constraint function.
    UnimodalCheck {
        scenario: PathBuf,
        solution: PathBuf,
        #[arg(long, default_value_t = 50_000)]
        samples: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Chord tolerance; defaults to twice the 99 % DKW half-width.
        #[arg(long)]
        xi: Option<f64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Solve with both bounds on the same per-row risks and compare.
    Compare {
        scenario: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        backend: Option<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum BoundArg {
    Vp,
    Cantelli,
}

impl From<BoundArg> for BoundKind {
    fn from(b: BoundArg) -> Self {
        match b {
            BoundArg::Vp => BoundKind::VysochanskijPetunin,
            BoundArg::Cantelli => BoundKind::Cantelli,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> CliResult {
    match command {
        Command::Plan {
            scenario,
            out,
            bound,
            backend,
        } => plan(&scenario, &out, bound.map(Into::into), backend.as_deref()),
        Command::Validate {
            scenario,
            solution,
            samples,
            seed,
            out,
        } => validate(&scenario, &solution, samples, seed, &out),
        Command::UnimodalCheck {
            scenario,
            solution,
            samples,
            seed,
            xi,
            out,
        } => unimodal_check(&scenario, &solution, samples, seed, xi, &out),
        Command::Compare {
            scenario,
            out,
            samples,
            seed,
            backend,
        } => compare(&scenario, &out, samples, seed, backend.as_deref()),
    }
}

fn load(path: &Path) -> Result<(ScenarioFile, Scenario), Box<dyn StdError>> {
    let file = ScenarioFile::from_path(path)
        .map_err(|e| format!("{}: {e}", path.display()))?;
    let scenario = file
        .to_scenario()
        .map_err(|e| format!("{}: {e}", path.display()))?;
    Ok((file, scenario))
}

fn pick_backend(name: Option<&str>) -> Result<Box<dyn ConicBackend>, Box<dyn StdError>> {
    Ok(match name {
        Some(n) => backend_by_name(n)?,
        None => backend_from_env()?,
    })
}

fn write_json(dir: &Path, name: &str, value: &impl Serialize) -> Result<(), Box<dyn StdError>> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn load_solution(path: &Path, file: &ScenarioFile) -> Result<PlanSolution, Box<dyn StdError>> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let solution: PlanSolution = serde_json::from_str(&text)?;
    match &solution.scenario_hash {
        Some(h) if *h != file.hash() => Err(format!(
            "solution was computed for scenario {h}, but the given scenario hashes to {}",
            file.hash()
        )
        .into()),
        Some(_) => Ok(solution),
        None => {
            warn!("solution carries no scenario hash; skipping the consistency check");
            Ok(solution)
        }
    }
}

#[derive(Serialize)]
struct Metadata<'a> {
    tool: &'static str,
    version: &'static str,
    scenario_hash: String,
    bound: &'static str,
    backend: &'a str,
    seed: u64,
    ccp: ccplan::CcpConfig,
    solve_seconds: f64,
}

fn plan(path: &Path, out: &Path, bound: Option<BoundKind>, backend: Option<&str>) -> CliResult {
    let (file, scenario) = load(path)?;
    let kind = bound.unwrap_or(file.bound);
    let allocation = file.allocation(&scenario, kind)?;
    let reform = Reformulation::new(&scenario, &allocation)?;
    let backend = pick_backend(backend)?;
    let start = Instant::now();
    let mut solution = solve_ccp(&reform, backend.as_ref(), &file.ccp)?;
    let elapsed = start.elapsed().as_secs_f64();
    solution.scenario_hash = Some(file.hash());

    write_json(out, "solution.json", &solution)?;
    write_trajectories(&out.join("trajectories.csv"), &solution)?;
    write_json(
        out,
        "metadata.json",
        &Metadata {
            tool: "ccplan",
            version: env!("CARGO_PKG_VERSION"),
            scenario_hash: file.hash(),
            bound: kind.name(),
            backend: backend.name(),
            seed: file.seed,
            ccp: file.ccp,
            solve_seconds: elapsed,
        },
    )?;
    println!(
        "{} plan: cost {:.6e}, {} iterations, slack {:.2e}, certified {}",
        kind.name(),
        solution.cost,
        solution.iterations,
        solution.slack,
        solution.certified
    );
    Ok(if solution.certified {
        ExitCode::SUCCESS
    } else {
        warn!("plan is not certified");
        ExitCode::from(EXIT_FLAGGED)
    })
}

fn write_trajectories(path: &Path, solution: &PlanSolution) -> Result<(), Box<dyn StdError>> {
    let n = solution
        .mean_trajectories
        .first()
        .and_then(|t| t.first())
        .map_or(0, Vec::len);
    let mut header = vec!["vehicle".to_string(), "k".to_string()];
    if n == 4 {
        header.extend(["x", "y", "vx", "vy"].map(String::from));
    } else {
        header.extend((0..n).map(|i| format!("s{i}")));
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(&header)?;
    for (v, traj) in solution.mean_trajectories.iter().enumerate() {
        for (k, state) in traj.iter().enumerate() {
            let mut rec = vec![v.to_string(), k.to_string()];
            rec.extend(state.iter().map(|x| format!("{x:.12e}")));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn validate(
    path: &Path,
    solution: &Path,
    samples: usize,
    seed: Option<u64>,
    out: &Path,
) -> CliResult {
    let (file, scenario) = load(path)?;
    let solution = load_solution(solution, &file)?;
    let seed = seed.unwrap_or(file.seed);
    let report = measure_satisfaction(&scenario, &solution, samples, seed)?;
    write_json(out, "satisfaction.json", &report)?;
    print_report(&report);
    Ok(if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_FLAGGED)
    })
}

fn print_report(report: &SatisfactionReport) {
    for (name, group) in [
        ("target", &report.target),
        ("obstacle", &report.obstacle),
        ("collision", &report.collision),
    ] {
        if let Some(g) = group {
            println!(
                "{name}: {:.4} (required {:.4}, 3σ floor {:.4}) {}",
                g.probability,
                g.required,
                g.required - 3.0 * g.std_error,
                if g.passed { "pass" } else { "FAIL" }
            );
        }
    }
    if report.wide_interval {
        println!("warning: {} samples are too few for a meaningful comparison", report.samples);
    }
}

#[derive(Serialize)]
struct UnimodalityFile {
    samples: usize,
    seed: u64,
    all_unimodal: bool,
    rows: Vec<ccplan::validation::RowUnimodality>,
}

fn unimodal_check(
    path: &Path,
    solution: &Path,
    samples: usize,
    seed: Option<u64>,
    xi: Option<f64>,
    out: &Path,
) -> CliResult {
    let (file, scenario) = load(path)?;
    let solution = load_solution(solution, &file)?;
    let seed = seed.unwrap_or(file.seed);
    let cfg = UnimodalityConfig {
        xi,
        ..UnimodalityConfig::default()
    };
    let rows = constraint_unimodality(&scenario, &solution, samples, seed, &cfg)?;
    let all = rows.iter().all(|r| r.outcome.unimodal);
    for r in rows.iter().filter(|r| !r.outcome.unimodal) {
        println!("not unimodal: {} {}", r.group, r.row);
    }
    println!(
        "{} of {} constraint functions look unimodal",
        rows.iter().filter(|r| r.outcome.unimodal).count(),
        rows.len()
    );
    write_json(
        out,
        "unimodality.json",
        &UnimodalityFile {
            samples,
            seed,
            all_unimodal: all,
            rows,
        },
    )?;
    Ok(if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_FLAGGED)
    })
}

fn compare(
    path: &Path,
    out: &Path,
    samples: usize,
    seed: Option<u64>,
    backend: Option<&str>,
) -> CliResult {
    let (file, scenario) = load(path)?;
    let seed = seed.unwrap_or(file.seed);
    let backend = pick_backend(backend)?;
    let allocation = file.allocation(&scenario, file.bound)?;
    let kinds = [BoundKind::VysochanskijPetunin, BoundKind::Cantelli];
    let results = compare_bounds(&scenario, &allocation, &kinds, backend.as_ref(), &file.ccp);

    fs::create_dir_all(out)?;
    let mut w = csv::Writer::from_path(out.join("comparison.csv"))?;
    w.write_record([
        "method",
        "status",
        "cost",
        "iterations",
        "slack",
        "certified",
        "target_satisfaction",
        "obstacle_satisfaction",
        "collision_satisfaction",
    ])?;
    let cell = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.6}"));
    for (kind, result) in results {
        match result {
            Ok(mut solution) => {
                solution.scenario_hash = Some(file.hash());
                write_json(out, &format!("solution_{}.json", kind.name()), &solution)?;
                let report = match measure_satisfaction(&scenario, &solution, samples, seed) {
                    Ok(r) => Some(r),
                    Err(e) => {
                        warn!("skipping Monte Carlo for {}: {e}", kind.name());
                        None
                    }
                };
                let prob = |pick: fn(&SatisfactionReport) -> Option<f64>| {
                    report.as_ref().and_then(pick)
                };
                let status = if solution.certified { "certified" } else { "not_certified" };
                w.write_record([
                    kind.name().to_string(),
                    status.to_string(),
                    format!("{:.9e}", solution.cost),
                    solution.iterations.to_string(),
                    format!("{:.3e}", solution.slack),
                    solution.certified.to_string(),
                    cell(prob(|r| r.target.as_ref().map(|g| g.probability))),
                    cell(prob(|r| r.obstacle.as_ref().map(|g| g.probability))),
                    cell(prob(|r| r.collision.as_ref().map(|g| g.probability))),
                ])?;
                info!("{}: cost {:.6e}", kind.name(), solution.cost);
                println!("{}: {status}, cost {:.6e}", kind.name(), solution.cost);
            }
            Err(e) => {
                println!("{}: failed ({e})", kind.name());
                let status = match e {
                    ccplan::Error::Infeasible(_) | ccplan::Error::InfeasibleAllocation(_) => {
                        "infeasible"
                    }
                    _ => "error",
                };
                w.write_record([
                    kind.name(),
                    status,
                    "",
                    "",
                    "",
                    "false",
                    "",
                    "",
                    "",
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(ExitCode::SUCCESS)
}
