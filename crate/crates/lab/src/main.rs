use clap::Parser;

fn main() {
    let cli = icgps_lab::cli::Cli::parse();
    std::process::exit(icgps_lab::cli::main_with(cli));
}
