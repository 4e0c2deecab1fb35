use clap::Parser;

fn main() {
    let cli = longform_cli::Cli::parse();
    std::process::exit(longform_cli::run(cli));
}
