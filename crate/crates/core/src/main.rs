fn main() {
    std::process::exit(toric_reopt::cli::main_with_args(std::env::args_os()));
}
