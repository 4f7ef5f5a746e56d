fn main() {
    std::process::exit(fedrank::cli::main_with_args(std::env::args_os()));
}
