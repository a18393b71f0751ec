fn main() {
    std::process::exit(adpsplit::cli::run(std::env::args()));
}
