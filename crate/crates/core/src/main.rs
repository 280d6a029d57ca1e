fn main() {
    std::process::exit(vinit::cli::run(std::env::args_os()));
}
