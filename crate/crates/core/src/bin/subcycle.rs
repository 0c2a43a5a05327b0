fn main() {
    std::process::exit(subcycle::cli::run(std::env::args_os()));
}
