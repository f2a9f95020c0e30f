fn main() {
    std::process::exit(saltls::cli::run(std::env::args_os()));
}
