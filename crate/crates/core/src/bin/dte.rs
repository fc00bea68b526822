fn main() {
    std::process::exit(dte_core::cli::main_with_args(std::env::args_os()));
}
