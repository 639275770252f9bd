fn main() {
    std::process::exit(tension_core::cli::main_with_args(std::env::args_os()));
}
