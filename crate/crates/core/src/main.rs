fn main() {
    std::process::exit(relaxctl::cli::run(std::env::args_os()));
}
