use clap::Parser;

fn main() {
    let cli = ohie::cli::Cli::parse();
    std::process::exit(ohie::cli::dispatch(cli));
}
