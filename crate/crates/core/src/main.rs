fn main() {
    std::process::exit(lutfit::cli::main());
}
