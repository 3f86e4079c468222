fn main() {
    std::process::exit(lcg_cli::main_with_args(std::env::args_os()));
}
