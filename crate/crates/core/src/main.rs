fn main() {
    std::process::exit(hiercp::cli::main_with_args(std::env::args_os()));
}
