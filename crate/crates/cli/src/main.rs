fn main() {
    std::process::exit(optrule_cli::main_with_args(std::env::args_os()));
}
