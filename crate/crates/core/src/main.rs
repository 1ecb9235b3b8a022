fn main() {
    std::process::exit(microgan::cli::run(std::env::args_os()));
}
