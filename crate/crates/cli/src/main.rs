use clap::Parser;

use lowmach_cli::{execute, Cli};

fn main() {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("lowmach: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
