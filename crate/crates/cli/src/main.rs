fn main() {
    std::process::exit(dlens_cli::run(std::env::args_os()));
}
