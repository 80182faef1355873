use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use qgc::scenario::{parse_config, run, Mode};
use qgc::Error;

#[derive(Parser)]
#[command(
    name = "qgc",
    version,
    about = "Obstacle-avoiding cubics and geometric MPC on the Bloch sphere"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the cubic boundary-value problem.
    Cubic(Common),
    /// Run the receding-horizon controller.
    Mpc {
        #[command(flatten)]
        common: Common,
        /// Plan once and replay instead of re-planning every step.
        #[arg(long)]
        open_loop: bool,
    },
    /// Compare the variational integrator with unprojected RK4.
    Compare(Common),
    /// Tabulate the obstacle potential on a (θ, φ) lattice.
    PotentialGrid(Common),
}

#[derive(Args)]
struct Common {
    /// Scenario file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Parse(_) | Error::Validation(_) | Error::Io(_) => 2,
        Error::HorizonInfeasible { .. } => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (mode, common, open_loop) = match cli.command {
        Command::Cubic(c) => (Mode::Cubic, c, false),
        Command::Mpc { common, open_loop } => (Mode::Mpc, common, open_loop),
        Command::Compare(c) => (Mode::Compare, c, false),
        Command::PotentialGrid(c) => (Mode::PotentialGrid, c, false),
    };
    let result = parse_config(&common.config, mode).and_then(|mut cfg| {
        if open_loop {
            if let Some(m) = cfg.mpc.as_mut() {
                m.open_loop = true;
            }
        }
        let dir = common
            .out
            .clone()
            .unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
        let artifacts = run(&cfg)?;
        artifacts.write(&dir)?;
        Ok((artifacts, dir))
    });
    match result {
        Ok((artifacts, dir)) => {
            print!("{}", artifacts.report_toml());
            eprintln!("wrote {}", dir.display());
            if artifacts.report.converged {
                ExitCode::SUCCESS
            } else {
                eprintln!("error: solver did not converge");
                ExitCode::from(3)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
