fn main() {
    std::process::exit(spk_core::cli::main_with_args(std::env::args_os()));
}
