use clap::Parser;

use phasefield_cli::{run, Cli};

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    print!("{}", run(&cli)?);
    Ok(())
}
