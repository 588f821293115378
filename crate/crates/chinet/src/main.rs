fn main() {
    std::process::exit(chinet::cli::run());
}
