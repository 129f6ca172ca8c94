fn main() {
    std::process::exit(rrdc::cli::run(std::env::args()));
}
