fn main() {
    std::process::exit(lumbarseg::cli::run());
}
