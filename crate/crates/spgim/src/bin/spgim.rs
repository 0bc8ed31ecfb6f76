use clap::Parser;

fn main() {
    let cli = spgim::cli::Cli::parse();
    if let Err(e) = spgim::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
