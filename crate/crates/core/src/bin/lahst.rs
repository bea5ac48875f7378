fn main() {
    std::process::exit(lahst::cli::main_with_args(std::env::args_os()));
}
