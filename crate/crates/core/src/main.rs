fn main() {
    std::process::exit(caliper_core::cli::main_with_args(std::env::args_os()));
}
