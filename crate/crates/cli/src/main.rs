fn main() {
    std::process::exit(schemind_cli::main_with(std::env::args_os()));
}
