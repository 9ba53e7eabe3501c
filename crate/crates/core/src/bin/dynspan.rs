fn main() {
    std::process::exit(dynspan::cli::main_with(std::env::args_os()));
}
