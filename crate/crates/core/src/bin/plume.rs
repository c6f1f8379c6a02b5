use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use plume_core::cli::{cmd_compare, cmd_evaluate, cmd_fit_kernel, cmd_train, RunConfig};

#[derive(Parser)]
#[command(name = "plume", about = "Multi-agent river plume mapping")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit the spatiotemporal kernel on a synthetic sequence.
    FitKernel(Common),
    /// Train the shared DQN policy.
    Train(Common),
    /// Run held-out episodes with one policy.
    Evaluate(Common),
    /// Tabulate several policies and fleet sizes.
    Compare(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

fn run(cli: Cli) -> plume_core::Result<()> {
    let (Cmd::FitKernel(c) | Cmd::Train(c) | Cmd::Evaluate(c) | Cmd::Compare(c)) = &cli.cmd;
    let cfg = RunConfig::load(&c.config)?.with_overrides(c.out.clone(), c.seed);
    match cli.cmd {
        Cmd::FitKernel(_) => {
            let p = cmd_fit_kernel(&cfg)?;
            println!("lambda {} ell_m {} beta0 {} beta1 {} beta2 {}", p.lambda, p.ell_m, p.beta0, p.beta1, p.beta2);
        }
        Cmd::Train(_) => {
            let path = cmd_train(&cfg)?;
            println!("{}", path.display());
        }
        Cmd::Evaluate(_) => {
            let s = cmd_evaluate(&cfg)?;
            println!("{} agents {} mean_mse {:?}", s.policy, s.agents, s.mean_mse);
        }
        Cmd::Compare(_) => {
            for s in cmd_compare(&cfg)? {
                println!("{} agents {} mean_mse {:?}", s.policy, s.agents, s.mean_mse);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("plume: {e}");
            ExitCode::FAILURE
        }
    }
}
