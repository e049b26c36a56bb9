fn main() {
    std::process::exit(masguard::cli::main_with_args(std::env::args_os()));
}
