use discretized_returns::harness::cli::cli;

fn main() {
    std::process::exit(cli(std::env::args_os()));
}
