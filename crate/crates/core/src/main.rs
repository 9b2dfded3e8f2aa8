fn main() {
    std::process::exit(clova_core::cli::main_with(std::env::args_os()));
}
