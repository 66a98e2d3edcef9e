fn main() {
    std::process::exit(lrm::cli::run(std::env::args_os()));
}
