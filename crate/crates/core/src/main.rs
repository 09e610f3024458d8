fn main() {
    std::process::exit(ligocr::cli::run(std::env::args_os()));
}
