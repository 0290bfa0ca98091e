fn main() {
    std::process::exit(zskl::cli::run(std::env::args_os()));
}
