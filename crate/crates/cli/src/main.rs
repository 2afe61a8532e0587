mod commands;
mod config;
mod render;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{AblateArgs, SynthArgs};
use config::RunFlags;

/// Coupled-CNN hyperspectral + LiDAR classifier.
#[derive(Parser)]
#[command(name = "cofuse", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene with labels.
    Synth(SynthArgs),
    /// Train a model variant and write a checkpoint and training log.
    Train(RunFlags),
    /// Evaluate a checkpoint on test labels.
    Eval(RunFlags),
    /// Render a full-scene classification map.
    Map(RunFlags),
    /// Sweep one hyper-parameter axis.
    Ablate(AblateArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let text = e.to_string();
            let line = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("{}", line.trim());
            return ExitCode::from(2);
        }
    };
    let result = match &cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(f) => commands::train(f),
        Command::Eval(f) => commands::eval(f),
        Command::Map(f) => commands::map(f),
        Command::Ablate(a) => commands::ablate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut msg = String::new();
            for cause in e.chain().map(|c| c.to_string()) {
                if !msg.contains(&cause) {
                    if !msg.is_empty() {
                        msg += ": ";
                    }
                    msg += &cause;
                }
            }
            eprintln!("error: {}", msg.replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
