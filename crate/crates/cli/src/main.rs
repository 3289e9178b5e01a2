//! `fedsim`: dataset generation, shape models, generator training (local
//! and federated), sampling, previews and segmentation evaluation.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 bad arguments or config,
//! 3 federation protocol failure, 4 selftest failure.

mod cmd;
mod config;
mod fail;
mod output;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::fail::Outcome;

#[derive(Parser, Debug)]
#[command(name = "fedsim", version, about = "Learned CT simulation with federated training")]
struct Cli {
    /// Worker threads (default: one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    GenData(cmd::data::GenData),
    BuildSsm(cmd::data::BuildSsm),
    Train(cmd::train::Train),
    TrainFederated(cmd::federated::TrainFederated),
    Sample(cmd::train::Sample),
    Render(cmd::render::Render),
    Evaluate(cmd::evaluate::Evaluate),
    Selftest(cmd::selftest::Selftest),
}

fn run(c: &Command) -> Outcome<()> {
    match c {
        Command::GenData(a) => cmd::data::gen_data(a),
        Command::BuildSsm(a) => cmd::data::build(a),
        Command::Train(a) => cmd::train::train(a),
        Command::TrainFederated(a) => cmd::federated::train_federated(a),
        Command::Sample(a) => cmd::train::sample(a),
        Command::Render(a) => cmd::render::render(a),
        Command::Evaluate(a) => cmd::evaluate::evaluate(a),
        Command::Selftest(a) => cmd::selftest::selftest(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match cli.threads {
        Some(0) => {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        Some(n) => {
            fedsim::par::init_threads(n);
        }
        None => {}
    }
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            f.exit_code()
        }
    }
}
