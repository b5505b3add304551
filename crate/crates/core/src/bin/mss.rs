fn main() {
    std::process::exit(mss_core::cli::run(std::env::args_os()));
}
