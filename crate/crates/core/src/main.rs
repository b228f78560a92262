fn main() {
    std::process::exit(titan_core::cli::run(std::env::args_os()));
}
