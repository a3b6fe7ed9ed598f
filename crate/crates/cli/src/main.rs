use clap::Parser;

fn main() {
    let cli = tribench::Cli::parse();
    if let Err(e) = tribench::commands::dispatch(&cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
