fn main() {
    std::process::exit(dynega_landscape::cli::main());
}
