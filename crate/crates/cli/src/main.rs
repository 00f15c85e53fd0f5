//! `otlab`: config-driven runner for solves, stability experiments, the
//! invariant battery and timing runs.

mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use otlab::measures::{sample_source, SourceQuadrature};
use otlab::solver::{solve_eps_schedule, DualSolution};
use otlab::stability::{run_stability, Provenance, StabilityKind};
use otlab::verify::{run_verify, Suite};
use serde::Serialize;

use config::{LoadedConfig, RunConfig};

const VERSION: &str = env!("CARGO_PKG_VERSION");
/// Stability runs succeed when at least this share of records completed.
const MIN_COMPLETION: f64 = 0.75;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Solver(String),
    Verify(Vec<String>),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Verify(_) => 1,
            CliError::Config(_) => 2,
            CliError::Solver(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Solver(m) => write!(f, "solver failure: {m}"),
            CliError::Verify(s) => write!(f, "verification failed: {}", s.join(", ")),
        }
    }
}

impl From<otlab::Error> for CliError {
    fn from(e: otlab::Error) -> Self {
        use otlab::Error as E;
        match e {
            E::Solver(_) | E::NonConvergence { .. } | E::Numerics(_) => {
                CliError::Solver(e.to_string())
            }
            _ => CliError::Config(e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Config(format!("{}: {e}", path.display()))
}

#[derive(Parser)]
#[command(
    name = "otlab",
    version,
    about = "Semi-discrete entropic optimal transport experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the configured problem along its ε schedule.
    Solve(Common),
    /// Potential stability over the perturbation family.
    StabilityPot(Common),
    /// Map stability over the perturbation family.
    StabilityMap(Common),
    /// Run the invariant battery.
    Verify(Common),
    /// Time repeated solves.
    Bench(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Use exact LP potentials and hard maps in stability runs.
    #[arg(long)]
    oracle: bool,
    /// Restrict `verify` to the named suites (repeatable).
    #[arg(long = "suite")]
    suites: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

struct Run {
    config: RunConfig,
    provenance: Provenance,
    out: PathBuf,
    common: Common,
}

impl Run {
    fn new(common: Common) -> Result<Self, CliError> {
        let LoadedConfig { mut config, hash } = config::load(&common.config)?;
        let seed = common.seed.unwrap_or(config.seed);
        config.seed = seed;
        if common.oracle {
            config.stability.oracle = true;
        }
        let out = common
            .out
            .clone()
            .or_else(|| config.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from("otlab-out"));
        Ok(Run {
            config,
            provenance: Provenance {
                config_hash: hash,
                seed,
                version: VERSION.to_string(),
            },
            out,
            common,
        })
    }

    fn write(&self, name: &str, contents: &str) -> Result<(), CliError> {
        fs::create_dir_all(&self.out).map_err(|e| io_err(&self.out, e))?;
        let path = self.out.join(name);
        fs::write(&path, contents).map_err(|e| io_err(&path, e))
    }

    fn quadrature(&self) -> Result<SourceQuadrature, CliError> {
        Ok(sample_source(
            self.config.require_source()?,
            self.config.seed,
        )?)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Solve(c) => Run::new(c).and_then(|r| cmd_solve(&r)),
        Command::StabilityPot(c) => {
            Run::new(c).and_then(|r| cmd_stability(&r, StabilityKind::Potentials))
        }
        Command::StabilityMap(c) => {
            Run::new(c).and_then(|r| cmd_stability(&r, StabilityKind::Maps))
        }
        Command::Verify(c) => Run::new(c).and_then(|r| cmd_verify(&r)),
        Command::Bench(c) => Run::new(c).and_then(|r| cmd_bench(&r)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("otlab: {e}");
            ExitCode::from(e.code())
        }
    }
}

#[derive(Serialize)]
struct LevelSummary {
    eps: f64,
    residual: f64,
    objective: f64,
    iters: usize,
}

#[derive(Serialize)]
struct SolutionFile<'a> {
    provenance: &'a Provenance,
    eps_final: f64,
    residual: f64,
    objective: f64,
    psi: &'a [f64],
    levels: Vec<LevelSummary>,
}

fn potential_csv(
    prov: &Provenance,
    name: &str,
    rows: &[Vec<f64>],
    weights: &[f64],
    values: &[f64],
) -> String {
    let d = rows.first().map_or(0, Vec::len);
    let mut s = String::from("index");
    for k in 0..d {
        let _ = write!(s, ",x{k}");
    }
    let _ = writeln!(s, ",weight,{name}");
    for (i, (row, (w, v))) in rows.iter().zip(weights.iter().zip(values)).enumerate() {
        s.push_str(&i.to_string());
        for c in row {
            let _ = write!(s, ",{c:.16e}");
        }
        let _ = writeln!(s, ",{w:.16e},{v:.16e}");
    }
    let _ = writeln!(s, "{}", prov.comment_line());
    s
}

fn cmd_solve(run: &Run) -> Result<(), CliError> {
    let cfg = &run.config;
    let quad = run.quadrature()?;
    let targets = cfg.require_targets()?;
    let outcome = solve_eps_schedule(&quad, &targets.base, cfg.require_cost()?, &cfg.solver)?;
    if let Some(e) = outcome.failure {
        return Err(e.into());
    }
    let last: &DualSolution = outcome
        .last()
        .ok_or_else(|| CliError::Solver("empty ε schedule".into()))?;
    let file = SolutionFile {
        provenance: &run.provenance,
        eps_final: last.eps,
        residual: last.residual,
        objective: last.objective,
        psi: &last.psi,
        levels: outcome
            .solutions
            .iter()
            .map(|s| LevelSummary {
                eps: s.eps,
                residual: s.residual,
                objective: s.objective,
                iters: s.iters,
            })
            .collect(),
    };
    let json = serde_json::to_string_pretty(&file).map_err(|e| CliError::Solver(e.to_string()))?;
    run.write("solution.json", &(json + "\n"))?;
    let nodes = quad.nodes().to_rows();
    run.write(
        "phi.csv",
        &potential_csv(&run.provenance, "phi", &nodes, quad.weights(), &last.phi),
    )?;
    let base = &targets.base;
    run.write(
        "psi.csv",
        &potential_csv(
            &run.provenance,
            "psi",
            &base.points().to_rows(),
            base.weights(),
            &last.psi,
        ),
    )?;
    println!(
        "solve: {} levels, eps_final={:.3e}, residual={:.3e}, wrote {}",
        outcome.solutions.len(),
        last.eps,
        last.residual,
        run.out.display()
    );
    Ok(())
}

fn cmd_stability(run: &Run, kind: StabilityKind) -> Result<(), CliError> {
    let cfg = &run.config;
    let quad = run.quadrature()?;
    let targets = cfg.require_targets()?;
    let mut report = run_stability(
        &quad,
        &targets.base,
        &targets.family,
        cfg.require_cost()?,
        &cfg.stability_options(),
        kind,
        cfg.seed,
    )?;
    report.provenance = Some(run.provenance.clone());
    run.write("report.csv", &report.to_csv())?;
    run.write("report.json", &report.to_json()?)?;
    let fit = report
        .theta_fit
        .map_or("n/a".to_string(), |t| format!("{t:.4}"));
    println!(
        "{}: {}/{} records, theta_theory={:.4}, theta_fit={fit}, violations={}",
        match kind {
            StabilityKind::Potentials => "stability-pot",
            StabilityKind::Maps => "stability-map",
        },
        report.completed,
        report.records.len(),
        report.theta_theory,
        report
            .bound_violations
            .map_or("n/a".to_string(), |v| v.to_string()),
    );
    if report.completion_ratio() < MIN_COMPLETION {
        return Err(CliError::Solver(format!(
            "only {} of {} records completed",
            report.completed,
            report.records.len()
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct VerifyFile<'a> {
    provenance: &'a Provenance,
    results: &'a [otlab::verify::SuiteResult],
}

fn cmd_verify(run: &Run) -> Result<(), CliError> {
    let cfg = &run.config;
    let suites: Vec<Suite> = if run.common.suites.is_empty() {
        cfg.verify.suites.clone()
    } else {
        run.common
            .suites
            .iter()
            .map(|s| s.parse())
            .collect::<Result<_, otlab::Error>>()?
    };
    let results = run_verify(&suites, &cfg.verify_options(cfg.seed))?;
    for r in &results {
        let worst = r
            .worst()
            .map_or(String::new(), |c| format!(" worst: {}", c.name));
        println!(
            "{} {:<16} max_violation={:+.3e} checks={}{worst}",
            if r.passed { "PASS" } else { "FAIL" },
            r.suite.name(),
            r.max_violation,
            r.checks.len()
        );
    }
    let json = serde_json::to_string_pretty(&VerifyFile {
        provenance: &run.provenance,
        results: &results,
    })
    .map_err(|e| CliError::Solver(e.to_string()))?;
    run.write("verify.json", &(json + "\n"))?;
    let failed: Vec<String> = results
        .iter()
        .filter(|r| !r.passed)
        .map(|r| r.suite.name().to_string())
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verify(failed))
    }
}

fn cmd_bench(run: &Run) -> Result<(), CliError> {
    let cfg = &run.config;
    let quad = run.quadrature()?;
    let targets = cfg.require_targets()?;
    let cost = cfg.require_cost()?;
    let mut csv = String::from("repeat,levels,iters,residual,seconds\n");
    for rep in 0..cfg.bench.repeats.max(1) {
        let t = Instant::now();
        let outcome = solve_eps_schedule(&quad, &targets.base, cost, &cfg.solver)?;
        let secs = t.elapsed().as_secs_f64();
        if let Some(e) = outcome.failure {
            return Err(e.into());
        }
        let iters: usize = outcome.solutions.iter().map(|s| s.iters).sum();
        let residual = outcome.last().map_or(f64::NAN, |s| s.residual);
        let _ = writeln!(
            csv,
            "{rep},{},{iters},{residual:.16e},{secs:.6e}",
            outcome.solutions.len()
        );
        println!("bench: repeat {rep}: {secs:.3}s, {iters} iterations, residual {residual:.3e}");
    }
    let _ = writeln!(csv, "{}", run.provenance.comment_line());
    run.write("bench.csv", &csv)
}
