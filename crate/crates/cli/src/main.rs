fn main() {
    std::process::exit(dualseg_cli::main_with_args(std::env::args_os()));
}
