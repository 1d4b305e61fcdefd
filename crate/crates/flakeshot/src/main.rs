fn main() {
    std::process::exit(flakeshot::cli::run(std::env::args_os()));
}
