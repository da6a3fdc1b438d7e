use std::path::PathBuf;
use std::process::ExitCode;

use agepop_harness::{load, run, Command, ScenarioError, Settings};
use clap::{Parser, ValueEnum};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Cmd {
    Simulate,
    Spectral,
    Classify,
    Aeg,
    ResolventCheck,
    Selfcheck,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Simulate => Command::Simulate,
            Cmd::Spectral => Command::Spectral,
            Cmd::Classify => Command::Classify,
            Cmd::Aeg => Command::Aeg,
            Cmd::ResolventCheck => Command::ResolventCheck,
            Cmd::Selfcheck => Command::Selfcheck,
        }
    }
}

/// Age-structured population experiments.
///
/// Exit status: 0 when every check passes, 1 when a check fails or a run
/// breaks down, 2 on usage or scenario errors.
#[derive(Debug, Parser)]
#[command(name = "agepop", version)]
struct Cli {
    command: Cmd,

    /// Scenario file; optional for `selfcheck`.
    #[arg(long)]
    scenario: Option<PathBuf>,

    /// Age step, overriding the scenario grid.
    #[arg(long)]
    delta: Option<f64>,

    /// Time horizon, overriding `T` in the scenario.
    #[arg(long = "T", value_name = "T")]
    horizon: Option<f64>,

    /// Output directory for CSV and JSON artifacts.
    #[arg(long, default_value = "out")]
    out: PathBuf,

    /// Command tolerance: the neutral band for `classify` (default 1e-6),
    /// the Laplace residual for `resolvent-check` (default 1e-3).
    #[arg(long)]
    tol: Option<f64>,

    /// Root tolerance for the Malthusian parameter.
    #[arg(long, default_value_t = 1e-10)]
    root_tol: f64,

    /// Tolerance for consistency residuals.
    #[arg(long, default_value_t = 1e-10)]
    consistency_tol: f64,

    /// Accepted band for first-order halving ratios.
    #[arg(long, num_args = 2, value_names = ["LO", "HI"], default_values_t = [1.7, 2.3])]
    ratio_band: Vec<f64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let settings = Settings {
        delta: cli.delta,
        horizon: cli.horizon,
        out: cli.out,
        tol: cli.tol,
        root_tol: cli.root_tol,
        consistency_tol: cli.consistency_tol,
        ratio_band: (cli.ratio_band[0], cli.ratio_band[1]),
    };
    let loaded = match cli.scenario.as_deref().map(load).transpose() {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    match run(cli.command.into(), loaded.as_ref(), &settings) {
        Ok(report) => {
            println!("{}", report.summary());
            if report.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            let usage = e.chain().any(|c| c.is::<ScenarioError>()) || loaded.is_none();
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}
