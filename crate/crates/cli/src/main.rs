fn main() {
    std::process::exit(eorm_cli::run(std::env::args_os()));
}
