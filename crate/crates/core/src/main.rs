use clap::Parser;

fn main() {
    let cli = qfi_grape::cli::Cli::parse();
    if let Err(e) = qfi_grape::cli::execute(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
