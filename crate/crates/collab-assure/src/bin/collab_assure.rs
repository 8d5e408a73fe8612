fn main() {
    std::process::exit(collab_assure::cli::cli_main(std::env::args().skip(1)));
}
