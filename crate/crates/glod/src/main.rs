fn main() {
    std::process::exit(glod::cli::run());
}
