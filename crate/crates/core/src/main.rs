use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use buffered_junction::experiments::{
    bundled_scenarios_dir, parse_scenario, run_corollary, run_lipschitz, run_lrs, run_suite,
    run_theorem1, run_theorem2, simulate, write_report, ExperimentReport, LipschitzConfig,
    RunOptions,
};
use buffered_junction::Result;

/// Buffered junction and limit Riemann solver experiments.
#[derive(Parser)]
#[command(name = "junction", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the limit Riemann solution for a scenario.
    Lrs(Common),
    /// Simulate the buffered model and write time series and snapshots.
    Simulate(Common),
    /// Stationarity of well-prepared queues.
    Theorem1(Common),
    /// Long-time attraction to the limit Riemann solution.
    Theorem2(Common),
    /// Shrinking buffer sweep.
    Corollary(Common),
    /// Difference quotients of the limit Riemann fluxes.
    Lipschitz(Common),
    /// Every experiment on a directory of scenarios (the bundled ones by default).
    All(Common),
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario file, or a directory for `all`.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Cells per road.
    #[arg(long)]
    cells: Option<usize>,
    #[arg(long)]
    cfl: Option<f64>,
    #[arg(long = "t-end")]
    t_end: Option<f64>,
    /// Comma-separated buffer scales for `corollary`.
    #[arg(long, value_delimiter = ',')]
    epsilons: Option<Vec<f64>>,
    /// Output directory for report.txt and the CSV files.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Rerun at twice the cells and check the error scaling.
    #[arg(long)]
    refine: bool,
    /// Seed for the Lipschitz sweep.
    #[arg(long)]
    seed: Option<u64>,
    /// Queue split between binding roads for well-prepared data.
    #[arg(long)]
    alpha: Option<f64>,
    /// Number of sampled points for the Lipschitz sweep.
    #[arg(long)]
    trials: Option<usize>,
}

impl Common {
    fn options(&self) -> RunOptions {
        RunOptions {
            cells: self.cells,
            cfl: self.cfl,
            t_end: self.t_end,
            refine: self.refine,
            alpha: self.alpha,
            epsilons: self.epsilons.clone(),
            tau: None,
            seed: self.seed,
            trials: self.trials,
        }
    }

    fn scenario(&self) -> Result<buffered_junction::experiments::ScenarioConfig> {
        match &self.scenario {
            Some(path) => parse_scenario(path),
            None => Err(buffered_junction::Error::Config("--scenario is required".into())),
        }
    }
}

fn emit(report: &ExperimentReport, out: Option<&Path>) -> Result<bool> {
    print!("{}", report.summary());
    if let Some(dir) = out {
        for path in write_report(report, dir)? {
            eprintln!("wrote {}", path.display());
        }
    }
    Ok(report.passed())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Lrs(c) => emit(&run_lrs(&c.scenario()?)?, c.out.as_deref()),
        Command::Simulate(c) => emit(&simulate(&c.scenario()?, &c.options())?, c.out.as_deref()),
        Command::Theorem1(c) => emit(&run_theorem1(&c.scenario()?, &c.options())?, c.out.as_deref()),
        Command::Theorem2(c) => emit(&run_theorem2(&c.scenario()?, &c.options())?, c.out.as_deref()),
        Command::Corollary(c) => emit(&run_corollary(&c.scenario()?, &c.options())?, c.out.as_deref()),
        Command::Lipschitz(c) => {
            let cfg = c.scenario.as_ref().map(parse_scenario).transpose()?;
            let mut settings = cfg
                .as_ref()
                .and_then(|s| s.lipschitz.clone())
                .unwrap_or_else(LipschitzConfig::default);
            if let Some(seed) = c.seed {
                settings.seed = seed;
            }
            if let Some(trials) = c.trials {
                settings.trials = trials;
            }
            emit(&run_lipschitz(cfg.as_ref(), &settings)?, c.out.as_deref())
        }
        Command::All(c) => {
            let dir = c.scenario.clone().unwrap_or_else(bundled_scenarios_dir);
            let reports = run_suite(&dir, &c.options())?;
            let mut all_passed = true;
            for (name, report) in &reports {
                if let Some(out) = &c.out {
                    write_report(report, out.join(name))?;
                }
                for line in report.verdict_lines() {
                    println!("{name}: {line}");
                }
                all_passed &= report.passed();
            }
            println!("overall: {}", if all_passed { "PASS" } else { "FAIL" });
            Ok(all_passed)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
