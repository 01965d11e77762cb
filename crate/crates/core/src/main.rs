fn main() {
    std::process::exit(codeinr::cli::run(std::env::args_os()));
}
