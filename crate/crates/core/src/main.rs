fn main() {
    std::process::exit(trajcast::cli::run());
}
