use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dr_cli::attack::{attack_csv, parse_attack, run_attack};
use dr_cli::{parse_config, report, run_experiment, HarnessError, RunOptions};
use dr_core::event::{audit_records, EventLog};

#[derive(Parser)]
#[command(name = "dr-sim", about = "Data Retrieval simulator: sweeps, bound checks, attacks and log audits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Args)]
struct Flags {
    /// Override the spec's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override trials per cell.
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Directory for CSV, JSON and event log output.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Override the round cap of synchronous runs.
    #[arg(long, global = true)]
    round_cap: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a spec and print every trial plus the summary table.
    Run { config: PathBuf },
    /// Run a spec grid and print the summary table.
    Sweep { config: PathBuf },
    /// Mirror attack against a single-round protocol.
    AttackDemo { config: PathBuf },
    /// Check an NDJSON event log and print what it shows.
    Audit { eventlog: PathBuf },
}

fn experiment(config: &PathBuf, flags: &Flags, verbose: bool) -> Result<bool, HarnessError> {
    let mut spec = parse_config(config)?;
    if let Some(seed) = flags.seed {
        spec.seed = seed;
    }
    if let Some(trials) = flags.trials {
        spec.trials = trials.max(1);
    }
    if let Some(cap) = flags.round_cap {
        spec.round_cap = Some(cap);
    }
    let opts = RunOptions {
        jobs: flags.jobs,
        out_dir: flags.out_dir.clone(),
    };
    let results = run_experiment(&spec, &opts)?;
    if verbose {
        for r in &results {
            for t in &r.records {
                println!("{} {}", r.summary.protocol, serde_json::to_string(t).expect("trial serializes"));
            }
        }
    }
    let summaries: Vec<_> = results.into_iter().map(|r| r.summary).collect();
    print!("{}", report::table(&summaries));
    Ok(summaries.iter().all(|s| s.bounds_ok))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run { config } => experiment(config, &cli.flags, true),
        Command::Sweep { config } => experiment(config, &cli.flags, false),
        Command::AttackDemo { config } => (|| {
            let mut spec = parse_attack(config)?;
            if let Some(seed) = cli.flags.seed {
                spec.seed = seed;
            }
            if let Some(trials) = cli.flags.trials {
                spec.trials = trials;
            }
            let r = run_attack(&spec)?;
            let csv = attack_csv(&spec, &r)?;
            print!("{csv}");
            if let Some(dir) = &cli.flags.out_dir {
                fs::create_dir_all(dir)
                    .and_then(|_| fs::write(dir.join("attack.csv"), &csv))
                    .map_err(|source| HarnessError::Write { path: dir.clone(), source })?;
            }
            Ok(true)
        })(),
        Command::Audit { eventlog } => (|| {
            let text = fs::read_to_string(eventlog).map_err(|source| HarnessError::Read {
                path: eventlog.clone(),
                source,
            })?;
            let records = EventLog::parse_ndjson(&text)?;
            let audit = audit_records(&records);
            println!("{}", serde_json::to_string_pretty(&audit).expect("audit serializes"));
            Ok(audit.active_after_crash.is_empty())
        })(),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
