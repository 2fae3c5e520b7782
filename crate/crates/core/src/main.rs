fn main() {
    std::process::exit(qrkhs::cli::main_with_args(std::env::args_os()));
}
