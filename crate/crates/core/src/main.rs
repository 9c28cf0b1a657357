use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use microreduce::cli::{self, RunArgs, EXIT_ERROR, EXIT_STALLED, EXIT_USAGE, SEED_ENV};
use microreduce::report::Format;
use microreduce::workflow::JobOutcome;

#[derive(Parser)]
#[command(
    name = "microreduce",
    version,
    about = "Serverless-style MapReduce on a simulated cloud"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic flight dataset and its ground-truth ledger.
    GenData {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one job.
    Run {
        /// Built-in scenario 1..6 or a scenario TOML file.
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Let a stalled gate pass after its final attempt.
        #[arg(long)]
        override_gate: bool,
        #[arg(long, env = SEED_ENV)]
        seed: Option<u64>,
        #[arg(long)]
        calibration: Option<PathBuf>,
        #[arg(long)]
        workflow: Option<PathBuf>,
    },
    /// Rebuild the report tables of a finished execution.
    Report {
        #[arg(long)]
        exec: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "text")]
        format: String,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE as u8 } else { 0 });
        }
    };
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR as u8)
        }
    }
}

fn dispatch(command: Command) -> anyhow::Result<i32> {
    match command {
        Command::GenData { spec, out } => {
            let ledger = cli::gen_data(&spec, &out).context("gen-data")?;
            println!("{}", ledger.display());
            Ok(0)
        }
        Command::Run {
            scenario,
            data,
            out,
            override_gate,
            seed,
            calibration,
            workflow,
        } => {
            let args = RunArgs {
                scenario,
                data,
                out,
                override_gate,
                seed,
                calibration,
                workflow,
            };
            let res = cli::run(&args).context("run")?;
            let r = &res.report;
            for w in &r.warnings {
                eprintln!("warning: {w}");
            }
            println!("execution {} -> {}", r.execution_id, res.dir.display());
            if let Ok(text) =
                std::fs::read_to_string(res.dir.join(cli::REPORT_DIR).join("phases.txt"))
            {
                print!("{text}");
            }
            match &r.outcome {
                JobOutcome::Completed => {}
                JobOutcome::Stalled { ingested, mapped } => {
                    eprintln!(
                        "gate stalled: ingested={ingested} mapped={mapped}; {} messages ({} records) in the DLQ; rerun with --override-gate to proceed",
                        r.dlq_messages, r.dlq_records
                    );
                    debug_assert_eq!(res.exit_code(), EXIT_STALLED);
                }
                JobOutcome::Failed { reason } => eprintln!("job failed: {reason}"),
            }
            Ok(res.exit_code())
        }
        Command::Report { exec, out, format } => {
            let format: Format = format.parse()?;
            for p in cli::report(&exec, &out, format).context("report")? {
                println!("{}", p.display());
            }
            Ok(0)
        }
    }
}
