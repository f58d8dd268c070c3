fn main() {
    std::process::exit(opcert_cli::run(std::env::args()));
}
