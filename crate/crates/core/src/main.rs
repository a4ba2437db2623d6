fn main() {
    std::process::exit(synthtask::cli::main_with_args(std::env::args_os()));
}
