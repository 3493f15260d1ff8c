fn main() {
    std::process::exit(skelact::cli::run());
}
