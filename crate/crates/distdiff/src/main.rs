use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use distdiff::{commands, Command, RunConfig};

#[derive(Clone, Copy, ValueEnum)]
enum Cmd {
    Gendata,
    Train,
    Sample,
    Evaluate,
    Calibrate,
}

/// Distributional diffusion models for probabilistic regression.
#[derive(Parser)]
#[command(name = "distdiff", version)]
struct Cli {
    #[arg(value_enum)]
    command: Cmd,
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory, replacing `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print every configuration key with its default and exit.
    #[arg(long)]
    list_keys: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.list_keys {
        print!("{}", RunConfig::default().render());
        return ExitCode::SUCCESS;
    }
    let run = || -> anyhow::Result<PathBuf> {
        let mut cfg = match &cli.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        for kv in &cli.set {
            cfg.apply_override(kv)?;
        }
        let cmd = match cli.command {
            Cmd::Gendata => Command::Gendata,
            Cmd::Train => Command::Train,
            Cmd::Sample => Command::Sample,
            Cmd::Evaluate => Command::Evaluate,
            Cmd::Calibrate => Command::Calibrate,
        };
        commands::run(cmd, &cfg, cli.out.as_deref())
    };
    match run() {
        Ok(out) => {
            println!("wrote {}", out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
