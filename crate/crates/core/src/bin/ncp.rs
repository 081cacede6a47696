fn main() {
    std::process::exit(ncp::cli::run(std::env::args_os()));
}
