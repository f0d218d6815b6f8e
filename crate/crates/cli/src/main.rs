use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nsann_cli::sweeps::SweepKind;
use nsann_cli::{execute, resolve_config, Command, Pipeline};

#[derive(Parser)]
#[command(name = "nsann", version, about = "Graph ANN search with PQ traversal and an accelerator model")]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "nsann-out")]
    out: PathBuf,
    /// Overrides the config seed; required without a config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Suppress progress messages.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write the base and query sets as fvecs.
    Gen,
    /// Build the proximity graph.
    Build,
    /// Train PQ, encode the base set and calibrate beta.
    Encode,
    /// Search at each configured list size.
    Search,
    /// Reorder by visit frequency and plan the physical layout.
    Map,
    /// Replay query traces on the accelerator model.
    Simulate,
    /// Recompute recall from the search results.
    Eval,
    /// All stages in order.
    Run,
    /// Parameter sweep: recall_qps, queue_size, hot_nodes, bit_error, traffic.
    Sweep { kind: String },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = (|| {
        let cmd = match cli.cmd {
            Cmd::Gen => Command::Gen,
            Cmd::Build => Command::Build,
            Cmd::Encode => Command::Encode,
            Cmd::Search => Command::Search,
            Cmd::Map => Command::Map,
            Cmd::Simulate => Command::Simulate,
            Cmd::Eval => Command::Eval,
            Cmd::Run => Command::Run,
            Cmd::Sweep { kind } => Command::Sweep(kind.parse::<SweepKind>()?),
        };
        let cfg = resolve_config(cli.config.as_deref(), cli.seed)?;
        let mut p = Pipeline::new(cfg, &cli.out)?;
        p.verbose = !cli.quiet;
        execute(cmd, &mut p)
    })();
    match result {
        Ok(v) => {
            println!("{}", serde_json::to_string_pretty(&v).expect("json"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            let rec = serde_json::json!({"error": e.kind(), "message": e.to_string()});
            eprintln!("{rec}");
            ExitCode::from(1)
        }
    }
}
