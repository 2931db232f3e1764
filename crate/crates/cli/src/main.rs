//! `adp`: run the data plane and demo pipeline, verify and replay ledger
//! journals, and query transcripts over HTTP.
//!
//! Exit codes: 0 success, 1 check failed (broken chain, replay mismatch,
//! rejected query), 2 usage or configuration error.

mod ledger;
mod run;
mod transcripts;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

pub(crate) const EXIT_FAILED: u8 = 1;
pub(crate) const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(name = "adp", version, about = "Agentic data plane operator tool")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the demo pipeline against a scenario and write the ledger journal.
    Run(RunArgs),
    /// Verify a ledger journal's hash chain.
    Verify {
        ledger: PathBuf,
    },
    /// Re-run a scenario and compare its hash sequence with a recorded journal.
    Replay {
        ledger: PathBuf,
        #[command(flatten)]
        scenario: ScenarioArgs,
    },
    /// Query transcripts from a running server with a credential.
    Transcripts(transcripts::TranscriptArgs),
}

#[derive(Args, Clone)]
pub(crate) struct ScenarioArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the scenario tick count.
    #[arg(long)]
    ticks: Option<u64>,
    /// Adversarial agent behaviours: cross_channel, runaway, misreport,
    /// spoof_client, reserved_param, tool_probe.
    #[arg(long = "adversary", value_name = "NAME")]
    adversaries: Vec<String>,
}

#[derive(Args)]
pub(crate) struct RunArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Keep serving after the run until interrupted.
    #[arg(long)]
    serve: bool,
    /// Address for the HTTP surfaces; they start when this or --serve is given.
    #[arg(long)]
    listen: Option<String>,
    /// Journal path; ADP_LEDGER overrides it.
    #[arg(long)]
    ledger: Option<PathBuf>,
    /// Directory with the approval dashboard's static assets, served under /ui.
    #[arg(long)]
    ui: Option<PathBuf>,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt().with_writer(std::io::stderr).with_target(false).init();
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run(args) => run::cmd_run(args),
        Command::Verify { ledger } => ledger::cmd_verify(&ledger),
        Command::Replay { ledger, scenario } => ledger::cmd_replay(&ledger, &scenario),
        Command::Transcripts(args) => transcripts::cmd_transcripts(args),
    };
    ExitCode::from(code)
}
