fn main() {
    std::process::exit(tubesearch::cli::run(std::env::args_os()));
}
