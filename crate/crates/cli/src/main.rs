use clap::Parser;

fn main() {
    let cli = qsd_cli::Cli::parse();
    std::process::exit(qsd_cli::main_with(cli));
}
