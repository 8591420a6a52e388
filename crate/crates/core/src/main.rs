fn main() {
    std::process::exit(geosphere::cli::main(std::env::args_os()));
}
