fn main() {
    std::process::exit(lavino_cli::run(std::env::args_os()));
}
