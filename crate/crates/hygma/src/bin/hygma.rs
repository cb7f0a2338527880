fn main() {
    std::process::exit(hygma::cli::main());
}
