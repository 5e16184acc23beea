use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use evoavg_core::harness::{
    average_summary, emit_report, run_checks, run_sweep, solve_config, write_json, CheckOutcome, RecordStatus,
    RunConfig,
};
use evoavg_core::{Error, Result};

/// Averaging of oscillatory semilinear evolution equations.
#[derive(Parser)]
#[command(name = "evoavg", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one oscillatory trajectory and write it as CSV
    Solve(Common),
    /// Print the averaged generator and nonlinearity and run the Cesàro check
    Average(Common),
    /// Run the full lambda sweep and write the CSV and JSON reports
    Sweep(Common),
    /// Run the stability, perturbation and lemma-sum suites
    Check(Common),
}

#[derive(Args)]
struct Common {
    /// Path to a TOML run config
    config: PathBuf,

    /// Lambda values, descending and comma-separated (overrides config)
    #[arg(long, value_delimiter = ',')]
    lambda: Option<Vec<f64>>,

    /// Steps of the averaged solve, or of the single solve (overrides config)
    #[arg(long)]
    steps: Option<usize>,

    /// Output directory (overrides config and environment)
    #[arg(long)]
    out: Option<PathBuf>,

    /// Record wall-clock times in the sweep report
    #[arg(long)]
    timing: bool,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(l) = &self.lambda {
            cfg.sweep.lambdas = l.clone();
        }
        if let Some(k) = self.steps {
            cfg.sweep.steps = evoavg_core::harness::StepsSpec::Fixed(k);
        }
        if let Some(dir) = &self.out {
            cfg.output.dir = Some(dir.clone());
        }
        cfg.output.timing |= self.timing;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Ran to completion but some record escaped or some certified bound failed.
struct NumericalIssues(Vec<String>);

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(issues) if issues.0.is_empty() => ExitCode::SUCCESS,
        Ok(issues) => {
            for i in issues.0 {
                eprintln!("numerical failure: {i}");
            }
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}

fn run(command: Command) -> Result<NumericalIssues> {
    match command {
        Command::Solve(c) => solve(&c),
        Command::Average(c) => average(&c),
        Command::Sweep(c) => sweep(&c),
        Command::Check(c) => check(&c),
    }
}

fn solve(c: &Common) -> Result<NumericalIssues> {
    let cfg = c.load()?;
    let lambda = cfg.sweep.lambdas.first().copied();
    let traj = solve_config(&cfg, lambda, c.steps)?;
    let path = cfg.output.resolved_dir().join(&cfg.output.trajectory);
    ensure_parent(&path)?;
    traj.save_csv(&path)?;
    println!(
        "solved {} with lambda = {} in {} steps -> {}",
        cfg.name,
        lambda.map_or("none".to_string(), |l| l.to_string()),
        traj.steps(),
        path.display()
    );
    Ok(NumericalIssues(vec![]))
}

fn average(c: &Common) -> Result<NumericalIssues> {
    let cfg = c.load()?;
    let s = average_summary(&cfg)?;
    println!("A_hat =");
    for row in &s.a_hat {
        let cells: Vec<String> = row.iter().map(|x| format!("{x:>12.6}")).collect();
        println!("  [{}]", cells.join(" "));
    }
    if s.f_hat.is_empty() {
        println!("F_hat = 0");
    } else {
        println!("F_hat =");
        for term in &s.f_hat {
            println!("  {term}");
        }
    }
    let r = &s.cesaro;
    println!("cesaro check: {:?}", r.verdict);
    for (t, m) in r.t_grid.iter().zip(&r.max_over_h) {
        println!("  T = {t:>8}  max over h = {m:.6e}");
    }
    println!("  estimated limit = {:.6e} (tolerance {:e})", r.estimated_limit, r.tolerance);
    Ok(NumericalIssues(vec![]))
}

fn sweep(c: &Common) -> Result<NumericalIssues> {
    let cfg = c.load()?;
    let report = run_sweep(&cfg)?;
    let (csv, json) = emit_report(&report, &cfg.output.resolved_dir(), &cfg.output.csv, &cfg.output.json)?;
    println!("{:>12} {:>14} {:>14}", "lambda", "sup_error", "terminal");
    for r in &report.records {
        match r.status {
            RecordStatus::Ok => println!(
                "{:>12} {:>14.6e} {:>14.6e}",
                r.lambda,
                r.sup_error.unwrap_or(f64::NAN),
                r.terminal_error.unwrap_or(f64::NAN)
            ),
            RecordStatus::Escaped { last_time } => println!("{:>12} escaped after t = {last_time}", r.lambda),
        }
    }
    let mut issues = report.checks.failures();
    match report.slope {
        Some(s) => println!("slope = {s:.4}"),
        None => {
            let note = report.fit_note.clone().unwrap_or_default();
            println!("slope undefined: {note}");
            issues.push(format!("rate fit: {note}"));
        }
    }
    if report.escaped() > 0 {
        issues.push(format!("{} lambda values escaped", report.escaped()));
    }
    println!("wrote {} and {}", csv.display(), json.display());
    Ok(NumericalIssues(issues))
}

fn check(c: &Common) -> Result<NumericalIssues> {
    let cfg = c.load()?;
    let setup = cfg.build()?;
    let mut spec = cfg.checks.clone();
    spec.stability = true;
    spec.perturbation = true;
    spec.lemma_sum = true;
    let reports = run_checks(&cfg, &setup, &spec)?;
    if let Some(list) = &reports.stability {
        for s in list {
            match s {
                CheckOutcome::Completed(s) => println!(
                    "stability ({}): M = {:.6}, omega = {:.6}; V: M = {:.6}, omega = {:.6}; dominated = {}",
                    s.family, s.certificate.e.m, s.certificate.e.omega, s.certificate.v.m, s.certificate.v.omega, s.dominated
                ),
                CheckOutcome::Failed { error } => println!("stability: failed: {error}"),
            }
        }
    }
    if let Some(p) = &reports.perturbation {
        match p {
            CheckOutcome::Completed(p) => {
                println!("perturbation: {} samples, all hold = {}", p.samples.len(), p.all_hold)
            }
            CheckOutcome::Failed { error } => println!("perturbation: failed: {error}"),
        }
    }
    if let Some(l) = &reports.lemma_sum {
        match l {
            CheckOutcome::Completed(l) => {
                for r in &l.records {
                    println!("lemma sum: lambda = {} discrepancy = {:.6e}", r.lambda, r.discrepancy);
                }
            }
            CheckOutcome::Failed { error } => println!("lemma sum: failed: {error}"),
        }
    }
    let path = cfg.output.resolved_dir().join(&cfg.output.checks);
    write_json(&path, &reports)?;
    println!("wrote {}", path.display());
    Ok(NumericalIssues(reports.failures()))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent().filter(|d| !d.as_os_str().is_empty()) {
        Some(dir) => std::fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        }),
        None => Ok(()),
    }
}
