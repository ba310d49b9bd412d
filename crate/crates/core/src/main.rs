fn main() {
    std::process::exit(hale::cli::run(std::env::args_os()));
}
