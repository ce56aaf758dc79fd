fn main() {
    std::process::exit(haarlab::cli::run(std::env::args_os()));
}
