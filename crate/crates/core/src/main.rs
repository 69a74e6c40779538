fn main() {
    std::process::exit(elcrf::cli::run(std::env::args_os()));
}
