use clap::Parser;

use dfa_core::cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("error[{}]: {}", e.category(), e.to_string().replace('\n', " "));
        std::process::exit(1);
    }
}
