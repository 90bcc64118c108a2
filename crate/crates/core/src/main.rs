use clap::Parser;

fn main() {
    let cli = tlu_core::cli::Cli::parse();
    if let Err(e) = tlu_core::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
