use clap::Parser;

fn main() {
    let cli = hmme_cli::Cli::parse();
    if let Err(e) = hmme_cli::run(&cli) {
        eprintln!("hmme: {e}");
        std::process::exit(e.exit_code());
    }
}
