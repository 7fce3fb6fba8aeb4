fn main() {
    std::process::exit(ivx_core::cli::run(std::env::args_os()));
}
