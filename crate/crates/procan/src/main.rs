fn main() {
    std::process::exit(procan::cli::run_cli(std::env::args()));
}
