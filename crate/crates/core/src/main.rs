fn main() {
    std::process::exit(letr::train::cli::run(std::env::args_os()));
}
