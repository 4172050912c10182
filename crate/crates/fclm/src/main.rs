fn main() {
    std::process::exit(fclm::cli::run());
}
