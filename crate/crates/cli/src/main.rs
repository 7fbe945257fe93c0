//! `vrjp`: command-line front end for the VRJP laboratory.
//!
//! Exit status: 0 when every declared verdict passes, 1 when a verdict
//! fails, 2 for configuration errors, 3 for run-time failures. Errors are
//! written to stderr as one JSON object per line.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vrjp_core::io::{parse_config_file, parse_config_in, resolve_out_dir, run_command, Command, IoError, Overrides};

#[derive(Parser)]
#[command(name = "vrjp", version, about = "Simulation and verification lab for vertex-reinforced jump processes")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate one trajectory; writes the jump log and checkpoints.
    Simulate(RunArgs),
    /// Decompose one trajectory into drift and martingale parts.
    Probe(RunArgs),
    /// Run the identity and simulator-law suites (config optional).
    Verify(RunArgs),
    /// Run an experiment, or every entry of a suite config.
    Experiment(RunArgs),
    /// Run an experiment or trajectory and write plot-ready tables.
    Report(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory [default: $VRJP_OUT_DIR or ./vrjp-out].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replica count, overriding the config.
    #[arg(long)]
    replicas: Option<u64>,
    /// Worker threads [default: all cores].
    #[arg(long)]
    threads: Option<usize>,
}

const EXIT_FAIL: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

fn fail(err: &IoError) -> ExitCode {
    eprintln!("{}", err.to_json());
    ExitCode::from(if err.is_config() { EXIT_CONFIG } else { EXIT_RUNTIME })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Cmd::Simulate(a) => (Command::Simulate, a),
        Cmd::Probe(a) => (Command::Probe, a),
        Cmd::Verify(a) => (Command::Verify, a),
        Cmd::Experiment(a) => (Command::Experiment, a),
        Cmd::Report(a) => (Command::Report, a),
    };
    if let Some(n) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("{}", serde_json::json!({"error": "Threads", "message": e.to_string()}));
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    let overrides = Overrides {
        seed: args.seed,
        replicas: args.replicas,
    };
    let manifest = match (&args.config, command) {
        (Some(path), _) => parse_config_file(path, command, overrides),
        (None, Command::Verify) => parse_config_in("{}", command, overrides, Path::new(".")),
        (None, _) => {
            eprintln!(
                "{}",
                serde_json::json!({"error": "MissingArgument", "message": "--config is required for this command"})
            );
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let manifest = match manifest {
        Ok(m) => m,
        Err(e) => return fail(&e),
    };
    let out_dir = resolve_out_dir(args.out);
    match run_command(&manifest, &out_dir) {
        Ok(outcome) => {
            print!("{}", outcome.digest);
            println!(
                "{} (manifest {:016x}, {} files in {})",
                if outcome.pass { "PASS" } else { "FAIL" },
                manifest.config_hash,
                outcome.outputs.len(),
                out_dir.display()
            );
            if outcome.pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_FAIL)
            }
        }
        Err(e) => fail(&e),
    }
}
