fn main() {
    std::process::exit(rul_cli::commands::main_with(std::env::args_os()));
}
