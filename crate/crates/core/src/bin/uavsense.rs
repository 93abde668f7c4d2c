fn main() {
    std::process::exit(uavsense::cli::main_with_args(std::env::args_os()));
}
