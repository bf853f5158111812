use clap::Parser;

fn main() {
    let cli = chreode_cli::Cli::parse();
    if let Err(e) = chreode_cli::run(&cli) {
        eprintln!("chreode: {e}");
        std::process::exit(e.exit_code());
    }
}
