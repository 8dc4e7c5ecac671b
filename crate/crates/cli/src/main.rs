fn main() {
    std::process::exit(edgescope_cli::main_with_args(std::env::args_os()));
}
