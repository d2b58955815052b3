fn main() {
    std::process::exit(optresp::cli::run(std::env::args_os()));
}
