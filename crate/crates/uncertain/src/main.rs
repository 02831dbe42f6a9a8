fn main() {
    std::process::exit(uncertain::cli::run());
}
