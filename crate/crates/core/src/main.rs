fn main() {
    std::process::exit(tracklink::cli::run_cli(std::env::args_os()));
}
