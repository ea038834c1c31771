fn main() {
    std::process::exit(nonlocal_cli::run(std::env::args_os()));
}
