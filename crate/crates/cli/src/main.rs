use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use gridmpc_cli::config::{parse_modes, Config};
use gridmpc_cli::pipeline::{Pipeline, RunOutcome, System};

#[derive(Parser)]
#[command(name = "gridmpc", version, about = "Diffusion-augmented forecasting and MPC dispatch for renewable microgrids")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Key-value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// benchmark, mpc, mpc-dynamic, a comma list, or all.
    #[arg(long, global = true)]
    mode: Option<String>,
    #[arg(long, global = true)]
    refit_hours: Option<usize>,
    #[arg(long, global = true)]
    horizon: Option<usize>,
    /// Plan on the realized load instead of the forecaster.
    #[arg(long, global = true)]
    perfect_foresight: bool,
    /// Artifact directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Threads for tree fitting and sample generation (0 = all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the dataset (synthetic, or the configured CSV).
    GenData,
    /// Train the diffusion model and generate day windows.
    Augment,
    /// Run the original / replicated / augmented protocol and fit the dispatch forest.
    Forecast,
    /// Bootstrap a history and identify the availability dynamics.
    Identify,
    /// Rolling dispatch on the park.
    Dispatch,
    /// Rolling dispatch on the 30-bus network.
    Dispatch30,
    /// Every mode on both systems plus the forecast and cost tables.
    Report,
    /// All stages in order.
    RunAll,
}

fn config(c: &Common) -> Result<Config> {
    let mut cfg = match &c.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(m) = &c.mode {
        cfg.modes = parse_modes(m)?;
    }
    if let Some(r) = c.refit_hours {
        cfg.refit_hours = r;
    }
    if let Some(h) = c.horizon {
        cfg.dispatch.horizon = h;
    }
    if c.perfect_foresight {
        cfg.perfect_foresight = true;
    }
    if let Some(j) = c.jobs {
        cfg.jobs = j;
    }
    Ok(cfg)
}

fn print_runs(runs: &[RunOutcome]) {
    for r in runs {
        let s = &r.schedule;
        println!(
            "{:<7} {:<12} cost {:>14.3}  slack hours {}  refits {}",
            r.system.as_str(),
            s.mode.as_str(),
            s.genuine_cost,
            s.slack_hours.len(),
            s.refit_hours.len()
        );
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = config(&cli.common)?;
    let modes = cfg.modes.clone();
    let p = Pipeline::new(cfg, &cli.common.out)?;
    match cli.command {
        Command::GenData => println!("{}", p.gen_data()?),
        Command::Augment => println!("{}", p.augment()?),
        Command::Forecast => print!("{}", p.forecast()?.to_csv()),
        Command::Identify => print!("{}", p.identify()?.to_text()),
        Command::Dispatch => print_runs(&p.dispatch(System::Park, &modes)?),
        Command::Dispatch30 => print_runs(&p.dispatch(System::Ieee30, &modes)?),
        Command::Report => print_runs(&p.report()?),
        Command::RunAll => print_runs(&p.run_all()?),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
