use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nsfold::scan::Execution;
use nsfold_cli::commands::{self, CliError, Context, EXIT_CONFIG};
use nsfold_cli::config::Experiment;

#[derive(Parser)]
#[command(
    name = "nsfold",
    version,
    about = "Certificates and simulations for nonsmooth folds"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment file (JSON with `system` and optional `run` sections).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file; stdout when omitted. scan2d also writes .svg and .ppm
    /// heatmaps next to it.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for scans.
    #[arg(long, global = true, env = "NSFOLD_THREADS")]
    threads: Option<usize>,
    /// Iteration budget: orbit steps, scan iterates, integrator steps or
    /// section returns, depending on the command.
    #[arg(long, global = true)]
    budget: Option<usize>,
    /// Seed for the sampled certificate check.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Classify the boundary equilibrium bifurcation and print any certificate.
    Certify,
    /// Iterate a map from run.x0.
    Orbit,
    /// Integrate a flow from run.x0 to run.t_end.
    Flow,
    /// Sweep one parameter: branches and the reached attractor.
    Scan1d,
    /// Classify attractors over a two-parameter grid.
    Scan2d,
    /// Find a limit cycle through the switching manifold.
    LimitCycle,
    /// Drift mu through the fold of Stommel's model.
    Tip,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Certify => "certify",
            Command::Orbit => "orbit",
            Command::Flow => "flow",
            Command::Scan1d => "scan1d",
            Command::Scan2d => "scan2d",
            Command::LimitCycle => "limit-cycle",
            Command::Tip => "tip",
        }
    }
}

fn run(cli: &Cli) -> Result<u8, CliError> {
    let path = cli.config.as_ref().ok_or_else(|| {
        CliError::Config(nsfold_cli::config::ConfigError(
            "--config is required".into(),
        ))
    })?;
    let (experiment, config_bytes) = Experiment::load(path)?;
    let exec = match cli.threads {
        None => Execution::Parallel,
        Some(0) => {
            return Err(CliError::Config(nsfold_cli::config::ConfigError(
                "--threads must be at least 1".into(),
            )))
        }
        Some(n) => Execution::Threads(n),
    };
    let ctx = Context {
        command: cli.command.name(),
        experiment,
        config_bytes,
        out: cli.out.clone(),
        exec,
        budget: cli.budget,
        seed: cli.seed,
    };
    match cli.command {
        Command::Certify => commands::certify(&ctx),
        Command::Orbit => commands::orbit(&ctx),
        Command::Flow => commands::flow(&ctx),
        Command::Scan1d => commands::scan1d(&ctx),
        Command::Scan2d => commands::scan2d_cmd(&ctx),
        Command::LimitCycle => commands::limit_cycle_cmd(&ctx),
        Command::Tip => commands::tip(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
