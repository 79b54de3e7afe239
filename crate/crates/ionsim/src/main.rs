fn main() {
    std::process::exit(ionsim::cli::main());
}
