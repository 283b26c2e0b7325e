fn main() {
    std::process::exit(gw_core::cli::run(std::env::args_os()));
}
