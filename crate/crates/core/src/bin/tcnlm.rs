fn main() {
    std::process::exit(tcnlm::cli::run(std::env::args_os()));
}
