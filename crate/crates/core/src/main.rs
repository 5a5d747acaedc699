fn main() {
    std::process::exit(microdesign::cli::run(std::env::args().collect()));
}
