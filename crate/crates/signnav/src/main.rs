fn main() {
    std::process::exit(signnav::cli::run(std::env::args_os()));
}
