fn main() {
    std::process::exit(cfear_cli::run_from(std::env::args_os()));
}
