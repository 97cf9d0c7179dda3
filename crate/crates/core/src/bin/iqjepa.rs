fn main() {
    std::process::exit(iqjepa::cli::main_with_args(std::env::args_os()));
}
