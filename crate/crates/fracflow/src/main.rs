fn main() {
    std::process::exit(fracflow::cli::run(std::env::args_os()));
}
