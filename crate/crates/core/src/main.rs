fn main() {
    std::process::exit(i2preg::cli::run(std::env::args_os()));
}
