use clap::Parser;
use dnk_cli::commands::{run, Cli};

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    run(&cli)?;
    Ok(())
}
