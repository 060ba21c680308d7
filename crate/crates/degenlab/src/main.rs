fn main() {
    std::process::exit(degenlab::cli::run(std::env::args_os()));
}
