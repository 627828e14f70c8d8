fn main() {
    std::process::exit(flowlab::cli::main_with_args(std::env::args_os()));
}
