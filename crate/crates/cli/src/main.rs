fn main() {
    std::process::exit(medkit_cli::run(std::env::args_os()));
}
