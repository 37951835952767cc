fn main() {
    std::process::exit(arcd::cli::run(std::env::args_os()));
}
