fn main() {
    std::process::exit(direal::cli::run(std::env::args_os()));
}
