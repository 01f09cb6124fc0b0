fn main() {
    std::process::exit(geoagent::cli::run_cli(std::env::args_os()));
}
