fn main() {
    std::process::exit(dichotomy_lab::cli::run(std::env::args_os()));
}
