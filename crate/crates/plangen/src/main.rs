use clap::Parser;
use plangen::commands::{run, Cli};

fn main() -> anyhow::Result<()> {
    run(Cli::parse())
}
