use clap::Parser;

fn main() {
    let cli = dasim_cli::Cli::parse();
    std::process::exit(dasim_cli::run(&cli));
}
