fn main() {
    std::process::exit(uvrelight::cli::main_with(std::env::args_os()));
}
