use anyhow::Context;
use clap::{Parser, Subcommand};
use fedlat::commands::{self, CommandError, CommandOutput, Overrides, EXIT_OTHER};
use fedlat::scenario::{load_scenario, PolicyName, ScenarioConfig};
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "fedlat", version, about = "Latency simulator and pruning/bandwidth optimizer for split federated fine-tuning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one round's allocation.
    Solve(Flags),
    /// Run a multi-round simulation.
    Simulate(Flags),
    /// Sweep compute heterogeneity across policies.
    Sweep(Flags),
    /// Compare the solver against exhaustive search (at most 3 clients).
    OracleCheck(Flags),
}

#[derive(clap::Args)]
struct Flags {
    /// Scenario file (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    policy: Option<PolicyName>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(cli: Cli) -> anyhow::Result<CommandOutput> {
    let (flags, f): (&Flags, fn(&ScenarioConfig) -> Result<CommandOutput, CommandError>) = match &cli.command {
        Command::Solve(a) => (a, commands::cmd_solve),
        Command::Simulate(a) => (a, commands::cmd_simulate),
        Command::Sweep(a) => (a, commands::cmd_sweep),
        Command::OracleCheck(a) => (a, commands::cmd_oracle_check),
    };
    let mut cfg = match &flags.config {
        Some(p) => load_scenario(p)
            .map_err(CommandError::from)
            .with_context(|| format!("loading {}", p.display()))?,
        None => ScenarioConfig::default(),
    };
    Overrides {
        seed: flags.seed,
        rounds: flags.rounds,
        policy: flags.policy,
        out: flags.out.clone(),
    }
    .apply(&mut cfg);
    cfg.validate().map_err(CommandError::from)?;
    Ok(f(&cfg)?)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(out) => {
            // a closed pipe on stdout is not a failure
            let mut stdout = std::io::stdout().lock();
            let _ = writeln!(stdout, "{}", out.headline);
            let _ = writeln!(
                stdout,
                "wrote {} ({} records) and {}",
                out.records_path.display(),
                out.n_records,
                out.table_path.display()
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<CommandError>().map_or(EXIT_OTHER, CommandError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
