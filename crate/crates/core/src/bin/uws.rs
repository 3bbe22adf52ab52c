fn main() {
    std::process::exit(universal_subspace::cli::run(std::env::args_os()));
}
