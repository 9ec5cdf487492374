fn main() {
    std::process::exit(eegtext::cli::main_with_args(std::env::args_os()));
}
