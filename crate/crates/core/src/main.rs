fn main() {
    std::process::exit(omegaforge::cli::run(std::env::args_os()));
}
