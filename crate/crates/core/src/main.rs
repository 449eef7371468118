fn main() {
    std::process::exit(marbin::cli::run(std::env::args_os()));
}
