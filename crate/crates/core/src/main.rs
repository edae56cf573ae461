fn main() {
    std::process::exit(nhflow::cli::run(std::env::args_os()));
}
