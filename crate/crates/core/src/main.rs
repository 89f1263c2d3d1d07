fn main() {
    std::process::exit(debye_bie::cli::run());
}
