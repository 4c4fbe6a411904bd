fn main() {
    std::process::exit(ewca_cli::run(std::env::args_os()));
}
