mod args;
mod commands;

use anyhow::{Context, Result};
use clap::Parser;

use args::{Cli, Command};

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match &cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train_cmd(a),
        Command::Ablate(a) => {
            let mut t = a.train.clone();
            t.ablate = Some(a.variant);
            commands::train_cmd(&t)
        }
        Command::Eval(a) => commands::eval_cmd(a),
        Command::InspectWeights(a) => commands::inspect_weights(a),
    }
}
