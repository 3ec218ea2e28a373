use clap::Parser;
use mfmdp_cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(outcome) => {
            print!("{}", outcome.summary);
            if !outcome.ok {
                std::process::exit(1);
            }
        }
        Err(e) => {
            eprintln!("error[{}]: {e}", e.kind());
            std::process::exit(e.exit_code());
        }
    }
}
