fn main() {
    std::process::exit(lcgan::cli::run());
}
