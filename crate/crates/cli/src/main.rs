fn main() {
    std::process::exit(dusev_cli::run(std::env::args_os()));
}
