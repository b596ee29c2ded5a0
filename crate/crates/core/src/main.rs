use clap::Parser;
use symmbem::cli::{configure_threads, run, Cli};

fn main() {
    let cli = Cli::parse();
    let code = configure_threads().and_then(|()| run(cli)).unwrap_or_else(|e| {
        eprintln!("error: {e}");
        2
    });
    std::process::exit(code);
}
