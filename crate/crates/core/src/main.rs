fn main() {
    std::process::exit(cygan::cli::run(std::env::args_os()));
}
