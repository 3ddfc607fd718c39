fn main() {
    std::process::exit(alps::cli::run(std::env::args_os()));
}
