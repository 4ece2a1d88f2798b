use clap::Parser;
use memsim_cli::{run, Args};

fn main() {
    let args = Args::parse();
    match run(&args) {
        Ok(outcome) => {
            for f in &outcome.files {
                println!("{}", f.display());
            }
        }
        Err(e) => {
            eprintln!("memsim: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
