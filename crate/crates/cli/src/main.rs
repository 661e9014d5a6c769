use clap::Parser;
use rtbf_cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(f) = run(&cli) {
        eprintln!("error: {}", f.message());
        std::process::exit(f.exit_code());
    }
}
