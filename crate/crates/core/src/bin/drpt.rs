fn main() {
    std::process::exit(drpt::cli::run(std::env::args_os()));
}
